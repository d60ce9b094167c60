use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

// WGS84
const SEMI_MAJOR: f64 = 6_378_137.0;
const ECC_SQ: f64 = 6.694_379_990_14e-3;

/// Geographic origin of the local East-North-Up frame.
///
/// Conversion uses the local equirectangular approximation with the WGS84
/// meridional and prime-vertical radii at the reference latitude. At
/// intersection scale (a few hundred meters) the error stays below 1 cm per
/// 100 m at mid-latitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoReference {
    pub lat: f64,
    pub lon: f64,
}

impl GeoReference {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    fn radii(&self) -> (f64, f64) {
        let s = self.lat.to_radians().sin();
        let w = 1.0 - ECC_SQ * s * s;
        let prime_vertical = SEMI_MAJOR / w.sqrt();
        let meridional = SEMI_MAJOR * (1.0 - ECC_SQ) / (w * w.sqrt());
        (meridional, prime_vertical)
    }

    /// Latitude/longitude in degrees and altitude in meters to ENU meters.
    pub fn to_enu(&self, lat: f64, lon: f64, alt: f64) -> Vector3<f64> {
        let (m, n) = self.radii();
        let east = (lon - self.lon).to_radians() * n * self.lat.to_radians().cos();
        let north = (lat - self.lat).to_radians() * m;
        Vector3::new(east, north, alt)
    }

    pub fn to_geodetic(&self, enu: &Vector3<f64>) -> (f64, f64, f64) {
        let (m, n) = self.radii();
        let lat = self.lat + (enu.y / m).to_degrees();
        let lon = self.lon + (enu.x / (n * self.lat.to_radians().cos())).to_degrees();
        (lat, lon, enu.z)
    }
}
