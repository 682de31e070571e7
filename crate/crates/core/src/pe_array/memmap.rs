//! Banked weight and bias memory layout.
//!
//! Weights live in 8 banks of 32-nibble rows; one 16x16 tile occupies one
//! row across all banks. Columns are grouped four at a time: the group
//! holding array columns 0..4 fills the two always-on banks, with the
//! top-left 4x4 subtile row-major at the front, and each later group fills
//! a pair of gateable banks. In 4x4 mode the gateable banks are powered
//! off and the two always-on banks are virtually stacked — the second
//! bank's rows extend the first's address space, doubling the row count —
//! giving 1024 addresses of one 4x4 tile (16 weights) each. Biases mirror
//! the split: four banks of four lanes, only the first always on (128
//! stacked addresses of 4 biases in 4x4 mode).
//!
//! Any bijective placement satisfying the round-trip and gating tests
//! would do; this one is chosen so the always-on capacity comes out at
//! exactly 16k weights + 512 biases.

use crate::netmodel::{Checkpoint, LayerShape};
use crate::quant::{LogWeight, QBias};
use crate::{Error, Result};

use super::ArrayMode;

pub const WEIGHT_BANKS: usize = 8;
pub const BIAS_BANKS: usize = 4;
/// Weight banks 0..2 and bias bank 0 stay powered in 4x4 mode.
pub const ALWAYS_ON_WEIGHT_BANKS: usize = 2;
pub const ALWAYS_ON_BIAS_BANKS: usize = 1;
pub const ROW_NIBBLES: usize = 32;

/// 4x4-mode capacity: 1024 addresses x 16 weights.
pub const CAP_4X4_WEIGHTS: usize = 16 * 1024;
pub const CAP_4X4_ADDRESSES: usize = 1024;
/// 4x4-mode bias capacity: 128 addresses x 4 biases.
pub const CAP_4X4_BIASES: usize = 512;
/// Full-array capacity.
pub const CAP_16X16_WEIGHTS: usize = 133 * 1024;
pub const CAP_16X16_BIASES: usize = 2048;

pub type Tile16 = [[LogWeight; 16]; 16];
pub type Tile4 = [[LogWeight; 4]; 4];

/// (bank, nibble offset within the bank's row) for cell (row, col) of a
/// 16x16 tile.
fn cell_position(r: usize, c: usize) -> (usize, usize) {
    let section = c / 4;
    let cs = c % 4;
    if section == 0 {
        if r < 4 {
            // top-left 4x4 subtile, row-major across the always-on pair
            let idx = r * 4 + cs;
            (idx / 8, idx % 8)
        } else {
            // remaining 12x4 of the always-on column group
            let idx = (r - 4) * 4 + cs;
            (idx / 24, 8 + idx % 24)
        }
    } else {
        let idx = r * 4 + cs;
        (2 * section + idx / ROW_NIBBLES, idx % ROW_NIBBLES)
    }
}

/// Where a layer's tiles start, in mode-specific address units.
#[derive(Debug, Clone, Copy)]
struct LayerMap {
    weight_base: usize,
    bias_base: usize,
    tiles_out: usize,
    tiles_in: usize,
    kernel: usize,
}

/// Banked weight/bias storage for one deployed checkpoint in one mode.
#[derive(Debug, Clone)]
pub struct WeightMemoryMap {
    pub mode: ArrayMode,
    /// Nibble arrays, one per weight bank, whole rows.
    banks: Vec<Vec<u8>>,
    /// Bias entries, one array per bias bank (4 lanes each).
    bias_banks: Vec<Vec<i16>>,
    layers: Vec<LayerMap>,
    weight_addresses: usize,
    bias_addresses: usize,
}

impl WeightMemoryMap {
    /// Lays out every layer of a checkpoint. In 4x4 mode the checkpoint
    /// must fit the always-on capacity (16k weights, 512 biases).
    pub fn map_checkpoint(ckpt: &Checkpoint, mode: ArrayMode) -> Result<WeightMemoryMap> {
        let shapes = ckpt.config.layer_shapes();
        let lane = match mode {
            ArrayMode::M16x16 => 16,
            ArrayMode::M4x4 => 4,
        };
        let mut map = WeightMemoryMap {
            mode,
            banks: vec![Vec::new(); WEIGHT_BANKS],
            bias_banks: vec![Vec::new(); BIAS_BANKS],
            layers: Vec::with_capacity(shapes.len()),
            weight_addresses: 0,
            bias_addresses: 0,
        };
        for (idx, shape) in shapes.iter().enumerate() {
            let tiles_out = shape.out_ch.div_ceil(lane);
            let tiles_in = shape.in_ch.div_ceil(lane);
            let weight_base = map.weight_addresses;
            let bias_base = map.bias_addresses;
            let tile_count = shape.kernel * tiles_out * tiles_in;
            let bias_rows = if shape.has_bias {
                shape.out_ch.div_ceil(lane)
            } else {
                0
            };
            map.layers.push(LayerMap {
                weight_base,
                bias_base,
                tiles_out,
                tiles_in,
                kernel: shape.kernel,
            });
            map.weight_addresses += tile_count;
            map.bias_addresses += bias_rows;
            map.check_capacity()?;
            for tap in 0..shape.kernel {
                for ot in 0..tiles_out {
                    for it in 0..tiles_in {
                        let addr = weight_base + (tap * tiles_out + ot) * tiles_in + it;
                        map.write_tile(addr, |r, c| {
                            let oc = ot * lane + c;
                            let ic = it * lane + r;
                            if oc < shape.out_ch && ic < shape.in_ch && r < lane && c < lane {
                                ckpt.weight(idx, shape, oc, ic, tap)
                            } else {
                                LogWeight::ZERO
                            }
                        });
                    }
                }
            }
            for row in 0..bias_rows {
                for lane_i in 0..lane {
                    let oc = row * lane + lane_i;
                    let v = if oc < shape.out_ch {
                        ckpt.bias(idx, oc).get()
                    } else {
                        0
                    };
                    map.write_bias(bias_base + row, lane_i, v);
                }
            }
        }
        Ok(map)
    }

    fn check_capacity(&self) -> Result<()> {
        match self.mode {
            ArrayMode::M4x4 => {
                if self.weight_addresses > CAP_4X4_ADDRESSES {
                    return Err(Error::Capacity {
                        what: "4x4-mode weight addresses (16 weights each)",
                        needed: self.weight_addresses,
                        available: CAP_4X4_ADDRESSES,
                    });
                }
                if self.bias_addresses * 4 > CAP_4X4_BIASES {
                    return Err(Error::Capacity {
                        what: "4x4-mode bias entries",
                        needed: self.bias_addresses * 4,
                        available: CAP_4X4_BIASES,
                    });
                }
            }
            ArrayMode::M16x16 => {
                if self.weight_addresses * 256 > CAP_16X16_WEIGHTS {
                    return Err(Error::Capacity {
                        what: "weight nibbles",
                        needed: self.weight_addresses * 256,
                        available: CAP_16X16_WEIGHTS,
                    });
                }
                if self.bias_addresses * 16 > CAP_16X16_BIASES {
                    return Err(Error::Capacity {
                        what: "bias entries",
                        needed: self.bias_addresses * 16,
                        available: CAP_16X16_BIASES,
                    });
                }
            }
        }
        Ok(())
    }

    fn ensure_rows(&mut self, bank: usize, rows: usize) {
        let want = rows * ROW_NIBBLES;
        if self.banks[bank].len() < want {
            self.banks[bank].resize(want, 0);
        }
    }

    fn write_tile(&mut self, addr: usize, cell: impl Fn(usize, usize) -> LogWeight) {
        match self.mode {
            ArrayMode::M16x16 => {
                for bank in 0..WEIGHT_BANKS {
                    self.ensure_rows(bank, addr + 1);
                }
                for r in 0..16 {
                    for c in 0..16 {
                        let (bank, pos) = cell_position(r, c);
                        self.banks[bank][addr * ROW_NIBBLES + pos] = cell(r, c).code();
                    }
                }
            }
            ArrayMode::M4x4 => {
                // stacked always-on addressing: bank 1's rows follow bank
                // 0's; two 16-weight tiles per 32-nibble row
                let bank = addr / (CAP_4X4_ADDRESSES / 2);
                let within = addr % (CAP_4X4_ADDRESSES / 2);
                let row = within / 2;
                let half = within % 2;
                self.ensure_rows(bank, row + 1);
                for r in 0..4 {
                    for c in 0..4 {
                        let pos = half * 16 + r * 4 + c;
                        self.banks[bank][row * ROW_NIBBLES + pos] = cell(r, c).code();
                    }
                }
            }
        }
    }

    fn write_bias(&mut self, addr: usize, lane: usize, v: i16) {
        match self.mode {
            ArrayMode::M16x16 => {
                let bank = lane / 4;
                let entry = addr * 4 + lane % 4;
                if self.bias_banks[bank].len() <= entry {
                    self.bias_banks[bank].resize(entry + 1, 0);
                }
                self.bias_banks[bank][entry] = v;
            }
            ArrayMode::M4x4 => {
                let entry = addr * 4 + lane;
                if self.bias_banks[0].len() <= entry {
                    self.bias_banks[0].resize(entry + 1, 0);
                }
                self.bias_banks[0][entry] = v;
            }
        }
    }

    /// Banks a full-tile read touches in this mode.
    pub fn weight_banks_per_read(&self) -> usize {
        match self.mode {
            ArrayMode::M16x16 => WEIGHT_BANKS,
            ArrayMode::M4x4 => 1,
        }
    }

    /// Reads one 16x16 tile (all banks, one row each).
    pub fn read_tile_16(&self, addr: usize) -> Tile16 {
        assert_eq!(
            self.mode,
            ArrayMode::M16x16,
            "16x16 reads only in 16x16 mode"
        );
        let mut tile = [[LogWeight::ZERO; 16]; 16];
        for (r, row) in tile.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                let (bank, pos) = cell_position(r, c);
                *cell = LogWeight::from_code(self.banks[bank][addr * ROW_NIBBLES + pos]);
            }
        }
        tile
    }

    /// Reads one 4x4 tile from the stacked always-on address space. Gated
    /// banks are powered off in this mode; reading one is a simulator bug.
    pub fn read_tile_4(&self, addr: usize) -> Tile4 {
        assert_eq!(self.mode, ArrayMode::M4x4, "4x4 reads only in 4x4 mode");
        let bank = addr / (CAP_4X4_ADDRESSES / 2);
        assert!(
            bank < ALWAYS_ON_WEIGHT_BANKS,
            "read from power-gated bank {bank} in 4x4 mode"
        );
        let within = addr % (CAP_4X4_ADDRESSES / 2);
        let row = within / 2;
        let half = within % 2;
        let mut tile = [[LogWeight::ZERO; 4]; 4];
        for (r, tile_row) in tile.iter_mut().enumerate() {
            for (c, cell) in tile_row.iter_mut().enumerate() {
                let pos = half * 16 + r * 4 + c;
                *cell = LogWeight::from_code(self.banks[bank][row * ROW_NIBBLES + pos]);
            }
        }
        tile
    }

    /// Address of a layer's tile for (tap, out tile, in tile).
    pub fn tile_address(&self, layer: usize, tap: usize, ot: usize, it: usize) -> usize {
        let m = &self.layers[layer];
        debug_assert!(tap < m.kernel && ot < m.tiles_out && it < m.tiles_in);
        m.weight_base + (tap * m.tiles_out + ot) * m.tiles_in + it
    }

    /// Whether a 4x4-mode (out tile, in tile) pair is backed by storage
    /// (partial 16x16 tiles are swept anyway but read nothing).
    pub fn tile_grid(&self, layer: usize) -> (usize, usize) {
        (self.layers[layer].tiles_out, self.layers[layer].tiles_in)
    }

    /// Bias for one output channel of a layer.
    pub fn read_bias(&self, layer: usize, oc: usize) -> QBias {
        let lane = match self.mode {
            ArrayMode::M16x16 => 16,
            ArrayMode::M4x4 => 4,
        };
        let m = &self.layers[layer];
        let addr = m.bias_base + oc / lane;
        let lane_i = oc % lane;
        let v = match self.mode {
            ArrayMode::M16x16 => {
                let bank = lane_i / 4;
                self.bias_banks[bank]
                    .get(addr * 4 + lane_i % 4)
                    .copied()
                    .unwrap_or(0)
            }
            ArrayMode::M4x4 => self.bias_banks[0]
                .get(addr * 4 + lane_i)
                .copied()
                .unwrap_or(0),
        };
        QBias::new(v)
    }

    pub fn bias_banks_per_read(&self) -> usize {
        match self.mode {
            ArrayMode::M16x16 => BIAS_BANKS,
            ArrayMode::M4x4 => 1,
        }
    }

    /// Reconstructs a layer's weight vector (checkpoint order) from the
    /// banks, exercising the mode's read path.
    pub fn read_back_layer(&self, layer: usize, shape: &LayerShape) -> Vec<LogWeight> {
        let lane = match self.mode {
            ArrayMode::M16x16 => 16,
            ArrayMode::M4x4 => 4,
        };
        let m = self.layers[layer];
        let mut out = vec![LogWeight::ZERO; shape.weight_count()];
        for tap in 0..m.kernel {
            for ot in 0..m.tiles_out {
                for it in 0..m.tiles_in {
                    let addr = self.tile_address(layer, tap, ot, it);
                    let get = |r: usize, c: usize| -> LogWeight {
                        match self.mode {
                            ArrayMode::M16x16 => self.read_tile_16(addr)[r][c],
                            ArrayMode::M4x4 => self.read_tile_4(addr)[r][c],
                        }
                    };
                    for r in 0..lane {
                        for c in 0..lane {
                            let oc = ot * lane + c;
                            let ic = it * lane + r;
                            if oc < shape.out_ch && ic < shape.in_ch {
                                out[(oc * shape.in_ch + ic) * shape.kernel + tap] = get(r, c);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Text dump of the bank contents for layout tests and docs.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "mode {} weight_addresses {} bias_addresses {}\n",
            self.mode, self.weight_addresses, self.bias_addresses
        ));
        for (b, bank) in self.banks.iter().enumerate() {
            let tag = if b < ALWAYS_ON_WEIGHT_BANKS {
                "always-on"
            } else {
                "gateable"
            };
            out.push_str(&format!(
                "weight-bank {b} ({tag}) rows {}\n",
                bank.len() / ROW_NIBBLES
            ));
            for row in bank.chunks(ROW_NIBBLES) {
                out.push_str("  ");
                for nib in row {
                    out.push(char::from_digit(*nib as u32, 16).unwrap());
                }
                out.push('\n');
            }
        }
        for (b, bank) in self.bias_banks.iter().enumerate() {
            let tag = if b < ALWAYS_ON_BIAS_BANKS {
                "always-on"
            } else {
                "gateable"
            };
            out.push_str(&format!("bias-bank {b} ({tag}) entries {}\n", bank.len()));
        }
        out
    }

    pub fn weight_addresses(&self) -> usize {
        self.weight_addresses
    }
}
