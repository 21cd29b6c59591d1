use crate::error::{Error, Result};

/// Real activations laid out channel-major: `data[c * time + t]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tensor2 {
    channels: usize,
    time: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn new(channels: usize, time: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || time == 0 {
            return Err(Error::Shape(format!("empty tensor {channels}×{time}")));
        }
        if data.len() != channels * time {
            return Err(Error::Shape(format!(
                "{} values for a {channels}×{time} tensor",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor data".into()));
        }
        Ok(Tensor2 {
            channels,
            time,
            data,
        })
    }


    pub fn zeros(channels: usize, time: usize) -> Self {
        Tensor2 {
            channels,
            time,
            data: vec![0.0; channels * time],
        }
    }

    pub fn from_row(row: &[f64]) -> Self {
        Tensor2 {
            channels: 1,
            time: row.len(),
            data: row.to_vec(),
        }
    }

    /// Sets the shape, keeping the allocation; contents are unspecified.
    pub(crate) fn reshape(&mut self, channels: usize, time: usize) {
        self.data.resize(channels * time, 0.0);
        self.channels = channels;
        self.time = time;
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.time..(c + 1) * self.time]
    }

    pub fn row_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.time..(c + 1) * self.time]
    }

    /// Rows `range` as a new tensor.
    pub fn rows(&self, range: std::ops::Range<usize>) -> Tensor2 {
        Tensor2 {
            channels: range.len(),
            time: self.time,
            data: self.data[range.start * self.time..range.end * self.time].to_vec(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor2) {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
    }
}
