/// A parameter set (or gradient) viewed as a list of flat `f64` blocks.
///
/// Optimizers and finite-difference checks address coordinates through this
/// view; the block order is fixed per type.
pub trait ParamBlocks {
    fn blocks(&self) -> Vec<&[f64]>;
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;

    fn flat_len(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    fn flat_get(&self, mut index: usize) -> f64 {
        for block in self.blocks() {
            if index < block.len() {
                return block[index];
            }
            index -= block.len();
        }
        panic!("flat index out of range");
    }

    fn flat_set(&mut self, mut index: usize, value: f64) {
        for block in self.blocks_mut() {
            if index < block.len() {
                block[index] = value;
                return;
            }
            index -= block.len();
        }
        panic!("flat index out of range");
    }
}
