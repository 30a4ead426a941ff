//! Materials and constructive solid geometry for the test object.
//!
//! The scene is a list of material bodies over a background material; where
//! bodies overlap, the last entry wins. All curved/extruded shapes have their
//! symmetry axis along +x, matching a drum lying on its side between two
//! horizontal tracking planes.

use nalgebra::{Point3, Vector3};

/// Boundary points closer than this (cm) are merged when segmenting a ray.
pub const BOUNDARY_MERGE_EPS: f64 = 1e-9;

/// Index into a scene's material table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MaterialId(pub usize);

/// Bulk material description. Radiation length is in cm, density in g/cm^3.
#[derive(Debug, Clone, PartialEq)]
pub struct Material {
    pub name: String,
    pub density: f64,
    pub radiation_length: f64,
    pub z_eff: f64,
}

impl Material {
    pub fn new(name: &str, density: f64, radiation_length: f64, z_eff: f64) -> Self {
        Self { name: name.to_string(), density, radiation_length, z_eff }
    }
}

/// Solid primitive. Cylinders and prisms extend along the x axis; the prism
/// cross-section is an isosceles triangle in the (y, z) plane with its
/// centroid at `center`, base `base` wide (along local y before rotation) and
/// apex `height * 2/3` above the centroid, rotated by `rotation` radians
/// counterclockwise in the (y, z) plane.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Cylinder { center: Point3<f64>, radius: f64, length: f64 },
    CylinderShell { center: Point3<f64>, inner_radius: f64, outer_radius: f64, length: f64 },
    TriangularPrism { center: Point3<f64>, base: f64, height: f64, thickness: f64, rotation: f64 },
}

impl Shape {
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        match self {
            Shape::Cylinder { center, radius, length } => {
                let (dy, dz) = (p.y - center.y, p.z - center.z);
                (p.x - center.x).abs() <= 0.5 * length && dy * dy + dz * dz <= radius * radius
            }
            Shape::CylinderShell { center, inner_radius, outer_radius, length } => {
                let (dy, dz) = (p.y - center.y, p.z - center.z);
                let rho2 = dy * dy + dz * dz;
                (p.x - center.x).abs() <= 0.5 * length
                    && rho2 >= inner_radius * inner_radius
                    && rho2 <= outer_radius * outer_radius
            }
            Shape::TriangularPrism { center, base, height, thickness, rotation } => {
                if (p.x - center.x).abs() > 0.5 * thickness {
                    return false;
                }
                let (c, s) = (rotation.cos(), rotation.sin());
                let (dy, dz) = (p.y - center.y, p.z - center.z);
                // rotate back into the prism's own frame
                let ly = c * dy + s * dz;
                let lz = -s * dy + c * dz;
                point_in_triangle(ly, lz, *base, *height)
            }
        }
    }

    /// Parameter values where the ray may cross this shape's surface.
    /// Spurious values (e.g. a cap plane hit outside the radius) are fine:
    /// segmentation classifies materials at segment midpoints, so extra
    /// boundaries only split a segment that is later re-merged.
    fn boundary_ts(&self, ray: &Ray, out: &mut Vec<f64>) {
        match self {
            Shape::Cylinder { center, radius, length } => {
                lateral_ts(ray, center, *radius, out);
                cap_ts(ray, center.x, *length, out);
            }
            Shape::CylinderShell { center, inner_radius, outer_radius, length } => {
                lateral_ts(ray, center, *inner_radius, out);
                lateral_ts(ray, center, *outer_radius, out);
                cap_ts(ray, center.x, *length, out);
            }
            Shape::TriangularPrism { center, base, height, thickness, rotation } => {
                cap_ts(ray, center.x, *thickness, out);
                let (c, s) = (rotation.cos(), rotation.sin());
                let oy = c * (ray.origin.y - center.y) + s * (ray.origin.z - center.z);
                let oz = -s * (ray.origin.y - center.y) + c * (ray.origin.z - center.z);
                let dy = c * ray.dir.y + s * ray.dir.z;
                let dz = -s * ray.dir.y + c * ray.dir.z;
                let (b2, h) = (0.5 * base, *height);
                let verts = [(-b2, -h / 3.0), (b2, -h / 3.0), (0.0, 2.0 * h / 3.0)];
                for i in 0..3 {
                    let (ay, az) = verts[i];
                    let (by, bz) = verts[(i + 1) % 3];
                    // edge normal in the prism frame
                    let (ny, nz) = (az - bz, by - ay);
                    let denom = dy * ny + dz * nz;
                    if denom.abs() > 1e-300 {
                        out.push(((ay - oy) * ny + (az - oz) * nz) / denom);
                    }
                }
            }
        }
    }
}

fn point_in_triangle(y: f64, z: f64, base: f64, height: f64) -> bool {
    let b2 = 0.5 * base;
    let verts = [(-b2, -height / 3.0), (b2, -height / 3.0), (0.0, 2.0 * height / 3.0)];
    let mut sign = 0i8;
    for i in 0..3 {
        let (ay, az) = verts[i];
        let (by, bz) = verts[(i + 1) % 3];
        let cross = (by - ay) * (z - az) - (bz - az) * (y - ay);
        if cross.abs() < 1e-300 {
            continue; // on the edge line: defer to the other edges
        }
        let s = if cross > 0.0 { 1 } else { -1 };
        if sign == 0 {
            sign = s;
        } else if sign != s {
            return false;
        }
    }
    true
}

fn lateral_ts(ray: &Ray, center: &Point3<f64>, radius: f64, out: &mut Vec<f64>) {
    let oy = ray.origin.y - center.y;
    let oz = ray.origin.z - center.z;
    let (dy, dz) = (ray.dir.y, ray.dir.z);
    let a = dy * dy + dz * dz;
    if a < 1e-300 {
        return; // parallel to the axis: radial coordinate never changes
    }
    let b = oy * dy + oz * dz;
    let c = oy * oy + oz * oz - radius * radius;
    let disc = b * b - a * c;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        out.push((-b - sq) / a);
        out.push((-b + sq) / a);
    }
}

fn cap_ts(ray: &Ray, cx: f64, length: f64, out: &mut Vec<f64>) {
    if ray.dir.x.abs() > 1e-300 {
        out.push((cx - 0.5 * length - ray.origin.x) / ray.dir.x);
        out.push((cx + 0.5 * length - ray.origin.x) / ray.dir.x);
    }
}

/// Half-line with unit direction; the parameter t is a distance in cm.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub dir: Vector3<f64>,
}

impl Ray {
    pub fn new(origin: Point3<f64>, dir: Vector3<f64>) -> Self {
        Self { origin, dir: dir.normalize() }
    }

    pub fn at(&self, t: f64) -> Point3<f64> {
        self.origin + self.dir * t
    }
}

/// Contiguous run of one material along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSegment {
    pub t_in: f64,
    pub t_out: f64,
    pub material: MaterialId,
}

impl PathSegment {
    pub fn length(&self) -> f64 {
        self.t_out - self.t_in
    }
}

/// Material bodies over a background material, with later bodies overriding
/// earlier ones where they overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub materials: Vec<Material>,
    pub background: MaterialId,
    pub bodies: Vec<(Shape, MaterialId)>,
}

impl Scene {
    pub fn material(&self, id: MaterialId) -> &Material {
        &self.materials[id.0]
    }

    pub fn material_named(&self, name: &str) -> Option<MaterialId> {
        self.materials.iter().position(|m| m.name == name).map(MaterialId)
    }

    pub fn material_at(&self, p: &Point3<f64>) -> MaterialId {
        for (shape, id) in self.bodies.iter().rev() {
            if shape.contains(p) {
                return *id;
            }
        }
        self.background
    }

    /// Distance along the ray (from t=0) to the nearest body surface, if any
    /// lies within `t_max`. Used by the transport stepper to avoid striding
    /// over a material change.
    pub fn next_boundary(&self, ray: &Ray, t_max: f64) -> Option<f64> {
        let mut best = f64::INFINITY;
        let mut ts = Vec::with_capacity(8);
        for (shape, _) in &self.bodies {
            ts.clear();
            shape.boundary_ts(ray, &mut ts);
            for &t in &ts {
                if t > BOUNDARY_MERGE_EPS && t < best {
                    best = t;
                }
            }
        }
        (best <= t_max).then_some(best)
    }

    /// Splits `[t_start, t_stop]` along the ray into material segments.
    /// Boundary values from all shapes are pooled and sorted, near-duplicates
    /// (within 1e-9 cm) merged, each gap classified by the material at its
    /// midpoint, and neighbouring same-material gaps fused.
    pub fn segment_path(&self, ray: &Ray, t_start: f64, t_stop: f64) -> Vec<PathSegment> {
        assert!(t_stop >= t_start, "inverted segmentation interval");
        let mut ts = vec![t_start, t_stop];
        let mut shape_ts = Vec::with_capacity(8);
        for (shape, _) in &self.bodies {
            shape_ts.clear();
            shape.boundary_ts(ray, &mut shape_ts);
            for &t in &shape_ts {
                if t > t_start && t < t_stop {
                    ts.push(t);
                }
            }
        }
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());

        let mut segments: Vec<PathSegment> = Vec::new();
        let mut prev = ts[0];
        for &t in &ts[1..] {
            if t - prev <= BOUNDARY_MERGE_EPS {
                continue;
            }
            let mid = 0.5 * (prev + t);
            let material = self.material_at(&ray.at(mid));
            match segments.last_mut() {
                Some(last) if last.material == material => last.t_out = t,
                _ => segments.push(PathSegment { t_in: prev, t_out: t, material }),
            }
            prev = t;
        }
        // a trailing sliver below the merge width still belongs to the span
        if let Some(last) = segments.last_mut() {
            last.t_out = t_stop;
        } else {
            segments.push(PathSegment {
                t_in: t_start,
                t_out: t_stop,
                material: self.material_at(&ray.at(0.5 * (t_start + t_stop))),
            });
        }
        segments
    }

    /// Marks grid voxels whose centers lie in `material`, then erodes the mask
    /// `erosion` times with the 6-neighbourhood (boundary voxels erode against
    /// the outside of the grid).
    pub fn region_mask(&self, grid: &GridSpec, material: MaterialId, erosion: u32) -> VoxelMask {
        let mut inside = vec![false; grid.len()];
        for ix in 0..grid.nx {
            for iy in 0..grid.ny {
                for iz in 0..grid.nz {
                    let c = grid.center(ix, iy, iz);
                    inside[grid.index(ix, iy, iz)] = self.material_at(&c) == material;
                }
            }
        }
        let mut mask = VoxelMask { grid: grid.clone(), inside };
        for _ in 0..erosion {
            mask = mask.eroded();
        }
        mask
    }
}

/// Uniform cubic voxel grid. `origin` is the minimum corner; voxel (0,0,0)
/// spans `[origin, origin + edge)` on each axis. Flat indices run z fastest,
/// then y, then x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub origin: Point3<f64>,
    pub edge: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, nz: usize, origin: Point3<f64>, edge: f64) -> Self {
        assert!(nx > 0 && ny > 0 && nz > 0, "grid dimensions must be positive");
        assert!(edge > 0.0, "voxel edge must be positive");
        Self { nx, ny, nz, origin, edge }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        debug_assert!(ix < self.nx && iy < self.ny && iz < self.nz);
        (ix * self.ny + iy) * self.nz + iz
    }

    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let iz = index % self.nz;
        let iy = (index / self.nz) % self.ny;
        let ix = index / (self.nz * self.ny);
        (ix, iy, iz)
    }

    pub fn center(&self, ix: usize, iy: usize, iz: usize) -> Point3<f64> {
        Point3::new(
            self.origin.x + (ix as f64 + 0.5) * self.edge,
            self.origin.y + (iy as f64 + 0.5) * self.edge,
            self.origin.z + (iz as f64 + 0.5) * self.edge,
        )
    }

    pub fn max_corner(&self) -> Point3<f64> {
        Point3::new(
            self.origin.x + self.nx as f64 * self.edge,
            self.origin.y + self.ny as f64 * self.edge,
            self.origin.z + self.nz as f64 * self.edge,
        )
    }
}

/// Boolean voxel selection over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelMask {
    pub grid: GridSpec,
    pub inside: Vec<bool>,
}

impl VoxelMask {
    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn eroded(&self) -> VoxelMask {
        let g = &self.grid;
        let mut out = vec![false; g.len()];
        for ix in 0..g.nx {
            for iy in 0..g.ny {
                for iz in 0..g.nz {
                    if !self.inside[g.index(ix, iy, iz)] {
                        continue;
                    }
                    let mut keep = true;
                    let neighbors: [(isize, isize, isize); 6] = [
                        (-1, 0, 0),
                        (1, 0, 0),
                        (0, -1, 0),
                        (0, 1, 0),
                        (0, 0, -1),
                        (0, 0, 1),
                    ];
                    for (dx, dy, dz) in neighbors {
                        let (jx, jy, jz) =
                            (ix as isize + dx, iy as isize + dy, iz as isize + dz);
                        if jx < 0
                            || jy < 0
                            || jz < 0
                            || jx as usize >= g.nx
                            || jy as usize >= g.ny
                            || jz as usize >= g.nz
                            || !self.inside[g.index(jx as usize, jy as usize, jz as usize)]
                        {
                            keep = false;
                            break;
                        }
                    }
                    out[g.index(ix, iy, iz)] = keep;
                }
            }
        }
        VoxelMask { grid: g.clone(), inside: out }
    }

    /// Restricts the mask to one x slab, clearing everything else.
    pub fn restricted_to_slab(&self, ix: usize) -> VoxelMask {
        let g = &self.grid;
        let mut inside = vec![false; g.len()];
        if ix < g.nx {
            for iy in 0..g.ny {
                for iz in 0..g.nz {
                    let i = g.index(ix, iy, iz);
                    inside[i] = self.inside[i];
                }
            }
        }
        VoxelMask { grid: g.clone(), inside }
    }

    pub fn intersect(&self, other: &VoxelMask) -> VoxelMask {
        assert_eq!(self.grid, other.grid, "mask grids differ");
        VoxelMask {
            grid: self.grid.clone(),
            inside: self
                .inside
                .iter()
                .zip(&other.inside)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }
}

/// Rotates a vector about the +x axis by `angle` (right-handed).
pub fn rotate_about_x(v: &Vector3<f64>, angle: f64) -> Vector3<f64> {
    let (s, c) = angle.sin_cos();
    Vector3::new(v.x, c * v.y - s * v.z, s * v.y + c * v.z)
}

pub fn rotate_point_about_x(p: &Point3<f64>, angle: f64) -> Point3<f64> {
    let (s, c) = angle.sin_cos();
    Point3::new(p.x, c * p.y - s * p.z, s * p.y + c * p.z)
}

// Standard drum phantom dimensions (cm) and material constants.
pub const DRUM_LENGTH: f64 = 42.0;
pub const DRUM_RADIUS: f64 = 17.0;
pub const DRUM_WALL: f64 = 0.09;

/// Builds the reference test object: a steel drum (0.09 cm wall and end caps)
/// filled with concrete, holding three triangular metal wedges. A lead wedge
/// sits in one cross-section plane; tungsten (lower left) and brass (upper
/// right) share another.
pub fn drum_phantom() -> Scene {
    let materials = vec![
        Material::new("air", 1.205e-3, 30_390.0, 7.4),
        Material::new("steel", 7.87, 1.76, 26.0),
        Material::new("concrete", 2.3, 11.55, 11.1),
        Material::new("lead", 11.3, 0.5612, 82.0),
        Material::new("brass", 8.5, 1.53, 29.6),
        Material::new("tungsten", 19.3, 0.3504, 74.0),
    ];
    let (air, steel, concrete, lead, brass, tungsten) = (
        MaterialId(0),
        MaterialId(1),
        MaterialId(2),
        MaterialId(3),
        MaterialId(4),
        MaterialId(5),
    );
    let half = 0.5 * DRUM_LENGTH;
    let bodies = vec![
        (
            Shape::Cylinder {
                center: Point3::origin(),
                radius: DRUM_RADIUS + DRUM_WALL,
                length: DRUM_LENGTH + 2.0 * DRUM_WALL,
            },
            steel,
        ),
        (
            Shape::Cylinder { center: Point3::origin(), radius: DRUM_RADIUS, length: DRUM_LENGTH },
            concrete,
        ),
        // lead: centered 20 cm from the -x end of the fill
        (
            Shape::TriangularPrism {
                center: Point3::new(-half + 20.0, 0.0, 6.0),
                base: 6.0,
                height: 7.0,
                thickness: 3.0,
                rotation: 0.0,
            },
            lead,
        ),
        // brass and tungsten: coplanar 32 cm from the same end
        (
            Shape::TriangularPrism {
                center: Point3::new(-half + 32.0, 5.5, 5.5),
                base: 9.0,
                height: 7.0,
                thickness: 5.0,
                rotation: 0.0,
            },
            brass,
        ),
        (
            Shape::TriangularPrism {
                center: Point3::new(-half + 32.0, -5.5, -5.5),
                base: 15.0,
                height: 10.0,
                thickness: 4.0,
                rotation: 0.0,
            },
            tungsten,
        ),
    ];
    Scene { materials, background: air, bodies }
}
