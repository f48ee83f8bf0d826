//! Time-ordered merge of the IMU and camera streams.

use std::iter::Peekable;

use super::CameraFrame;
use crate::preintegration::ImuMeasurement;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SensorEvent<'a> {
    Imu(&'a ImuMeasurement),
    Camera(&'a CameraFrame),
}

impl SensorEvent<'_> {
    pub fn timestamp(&self) -> f64 {
        match self {
            SensorEvent::Imu(m) => m.timestamp,
            SensorEvent::Camera(f) => f.timestamp,
        }
    }
}

/// Iterator over both streams in timestamp order. On equal timestamps the IMU
/// sample comes first, so a frame always sees the sample taken with it.
pub fn replay<'a>(imu: &'a [ImuMeasurement], frames: &'a [CameraFrame]) -> Replay<'a> {
    Replay {
        imu: imu.iter().peekable(),
        frames: frames.iter().peekable(),
    }
}

pub struct Replay<'a> {
    imu: Peekable<std::slice::Iter<'a, ImuMeasurement>>,
    frames: Peekable<std::slice::Iter<'a, CameraFrame>>,
}

impl<'a> Iterator for Replay<'a> {
    type Item = SensorEvent<'a>;

    fn next(&mut self) -> Option<Self::Item> {
        match (self.imu.peek(), self.frames.peek()) {
            (Some(m), Some(f)) if m.timestamp <= f.timestamp => self.imu.next().map(SensorEvent::Imu),
            (_, Some(_)) => self.frames.next().map(SensorEvent::Camera),
            (Some(_), None) => self.imu.next().map(SensorEvent::Imu),
            (None, None) => None,
        }
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.imu.len() + self.frames.len();
        (n, Some(n))
    }
}

impl ExactSizeIterator for Replay<'_> {}
