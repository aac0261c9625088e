//! Complex linear algebra and quantum-information primitives.
//!
//! Everything is dense: dimensions in this artifact never exceed a few
//! hundred (three spins times a modest Fock truncation), so sparse storage
//! is not worth the bookkeeping.
//!
//! Basis ordering convention: ion index 0 is the most-significant bit of a
//! basis string, so "110" means ion0=1, ion1=1, ion2=0. When a Fock factor
//! is present it is the least-significant subsystem.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;
pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Hard cap on tensor-product dimension; anything larger is a usage error.
pub const MAX_DIM: usize = 1 << 20;

pub const NORM_TOL: f64 = 1e-10;
pub const HERM_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = -1e-8;

#[derive(Debug, Error)]
pub enum QuantumError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("tensor dimension {0} exceeds maximum {MAX_DIM}")]
    DimensionOverflow(usize),
    #[error("state not normalized: |norm - 1| = {0:.3e}")]
    NotNormalized(f64),
    #[error("matrix not unitary: max |U†U - I| = {0:.3e} ({1})")]
    NotUnitary(f64, String),
    #[error("density matrix not Hermitian: max |ρ - ρ†| = {0:.3e}")]
    NotHermitian(f64),
    #[error("density matrix trace {0:.6} != 1")]
    BadTrace(f64),
    #[error("density matrix not positive semidefinite: min eigenvalue {0:.3e}")]
    NotPositive(f64),
    #[error("empty keep set in partial trace")]
    EmptyKeep,
    #[error("invalid subsystem index {0} (have {1} subsystems)")]
    BadSubsystem(usize, usize),
    #[error("invalid probability vector: {0}")]
    BadProbabilities(String),
    #[error("{0}")]
    Invalid(String),
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn cr(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn identity(dim: usize) -> CMat {
    CMat::identity(dim, dim)
}

pub fn pauli_x() -> CMat {
    CMat::from_row_slice(2, 2, &[cr(0.0), cr(1.0), cr(1.0), cr(0.0)])
}

pub fn pauli_y() -> CMat {
    CMat::from_row_slice(2, 2, &[cr(0.0), c(0.0, -1.0), c(0.0, 1.0), cr(0.0)])
}

pub fn pauli_z() -> CMat {
    CMat::from_row_slice(2, 2, &[cr(1.0), cr(0.0), cr(0.0), cr(-1.0)])
}

/// exp(-i (θ/2) n·σ) for n = (nx, ny, nz), |n| arbitrary (θ scales with |n|).
///
/// Closed form; this is the inner loop of the spin-path integrator.
pub fn su2_exp(theta: f64, nx: f64, ny: f64, nz: f64) -> CMat {
    let n = (nx * nx + ny * ny + nz * nz).sqrt();
    if n < 1e-300 {
        return identity(2);
    }
    let (ux, uy, uz) = (nx / n, ny / n, nz / n);
    let a = theta * n / 2.0;
    let (s, co) = a.sin_cos();
    CMat::from_row_slice(
        2,
        2,
        &[
            c(co, -s * uz),
            c(-s * uy, -s * ux),
            c(s * uy, -s * ux),
            c(co, s * uz),
        ],
    )
}

/// Kronecker product with `a` as the more-significant factor.
pub fn kron(a: &CMat, b: &CMat) -> Result<CMat, QuantumError> {
    let dim = a.nrows() * b.nrows();
    if dim > MAX_DIM || a.ncols() * b.ncols() > MAX_DIM {
        return Err(QuantumError::DimensionOverflow(dim));
    }
    Ok(a.kronecker(b))
}

pub fn kron_vec(a: &CVec, b: &CVec) -> Result<CVec, QuantumError> {
    let dim = a.len() * b.len();
    if dim > MAX_DIM {
        return Err(QuantumError::DimensionOverflow(dim));
    }
    let mut out = CVec::zeros(dim);
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            out[i * b.len() + j] = ai * bj;
        }
    }
    Ok(out)
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Distance up to global phase: min over phase of max |a - e^{iφ} b|.
pub fn phase_invariant_distance(a: &CMat, b: &CMat) -> f64 {
    // align on the largest-magnitude entry of b
    let mut idx = (0, 0);
    let mut best = 0.0;
    for i in 0..b.nrows() {
        for j in 0..b.ncols() {
            if b[(i, j)].norm() > best {
                best = b[(i, j)].norm();
                idx = (i, j);
            }
        }
    }
    if best < 1e-14 {
        return max_abs_diff(a, b);
    }
    let phase = a[idx] / b[idx];
    let phase = if phase.norm() < 1e-14 {
        cr(1.0)
    } else {
        phase / phase.norm()
    };
    max_abs_diff(a, &(b * phase))
}

#[derive(Debug, Clone)]
pub struct StateVector {
    pub amplitudes: CVec,
    pub qubit_count: usize,
    pub fock_dim: usize,
}

impl StateVector {
    pub fn new(amplitudes: CVec, qubit_count: usize, fock_dim: usize) -> Result<Self, QuantumError> {
        let dim = (1usize << qubit_count) * fock_dim;
        if amplitudes.len() != dim {
            return Err(QuantumError::DimensionMismatch(amplitudes.len(), dim));
        }
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(QuantumError::NotNormalized((norm - 1.0).abs()));
        }
        Ok(Self {
            amplitudes,
            qubit_count,
            fock_dim,
        })
    }

    /// Computational basis state |index⟩ over `qubit_count` spins.
    pub fn basis(qubit_count: usize, index: usize) -> Self {
        let dim = 1usize << qubit_count;
        let mut amps = CVec::zeros(dim);
        amps[index] = cr(1.0);
        Self {
            amplitudes: amps,
            qubit_count,
            fock_dim: 1,
        }
    }

    /// Basis state from a bit string like "110" (ion 0 first / most significant).
    pub fn from_bits(bits: &str) -> Result<Self, QuantumError> {
        let mut index = 0usize;
        for ch in bits.chars() {
            index <<= 1;
            match ch {
                '0' => {}
                '1' => index |= 1,
                _ => return Err(QuantumError::Invalid(format!("bad bit string {bits:?}"))),
            }
        }
        Ok(Self::basis(bits.len(), index))
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn apply(&self, u: &UnitaryOp) -> Result<Self, QuantumError> {
        if u.matrix.ncols() != self.dim() {
            return Err(QuantumError::DimensionMismatch(u.matrix.ncols(), self.dim()));
        }
        Ok(Self {
            amplitudes: &u.matrix * &self.amplitudes,
            qubit_count: self.qubit_count,
            fock_dim: self.fock_dim,
        })
    }

    pub fn to_density(&self) -> DensityMatrix {
        let n = self.dim();
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = self.amplitudes[i] * self.amplitudes[j].conj();
            }
        }
        DensityMatrix {
            matrix: m,
            qubit_count: self.qubit_count,
            fock_dim: self.fock_dim,
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct DensityMatrix {
    pub matrix: CMat,
    pub qubit_count: usize,
    pub fock_dim: usize,
}

impl DensityMatrix {
    pub fn new(matrix: CMat, qubit_count: usize, fock_dim: usize) -> Result<Self, QuantumError> {
        let dm = Self {
            matrix,
            qubit_count,
            fock_dim,
        };
        dm.validate()?;
        Ok(dm)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn validate(&self) -> Result<(), QuantumError> {
        let dim = (1usize << self.qubit_count) * self.fock_dim;
        if self.matrix.nrows() != dim || self.matrix.ncols() != dim {
            return Err(QuantumError::DimensionMismatch(self.matrix.nrows(), dim));
        }
        let herm = max_abs_diff(&self.matrix, &self.matrix.adjoint());
        if herm > HERM_TOL {
            return Err(QuantumError::NotHermitian(herm));
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(QuantumError::BadTrace(tr.re));
        }
        let min_ev = self.min_eigenvalue();
        if min_ev < PSD_TOL {
            return Err(QuantumError::NotPositive(min_ev));
        }
        Ok(())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.matrix)
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    /// ρ → U ρ U†.
    pub fn evolve(&self, u: &UnitaryOp) -> Result<Self, QuantumError> {
        if u.matrix.ncols() != self.dim() {
            return Err(QuantumError::DimensionMismatch(u.matrix.ncols(), self.dim()));
        }
        Ok(Self {
            matrix: &u.matrix * &self.matrix * u.matrix.adjoint(),
            qubit_count: self.qubit_count,
            fock_dim: self.fock_dim,
        })
    }

    /// Diagonal (population) in the computational basis.
    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.matrix[(i, i)].re).collect()
    }

    pub fn maximally_mixed(qubit_count: usize) -> Self {
        let dim = 1usize << qubit_count;
        Self {
            matrix: identity(dim) * cr(1.0 / dim as f64),
            qubit_count,
            fock_dim: 1,
        }
    }
}

/// Eigenvalues of a Hermitian matrix (sorted ascending not guaranteed).
pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    // Symmetrize first so tiny numerical skew does not upset the solver.
    let h = (m + m.adjoint()) * cr(0.5);
    let eig = nalgebra::SymmetricEigen::new(h);
    eig.eigenvalues.iter().copied().collect()
}

/// Hermitian PSD square root via eigendecomposition; negative dust is clamped.
pub fn hermitian_sqrt(m: &CMat) -> CMat {
    let h = (m + m.adjoint()) * cr(0.5);
    let eig = nalgebra::SymmetricEigen::new(h);
    let n = m.nrows();
    let mut d = CMat::zeros(n, n);
    for i in 0..n {
        d[(i, i)] = cr(eig.eigenvalues[i].max(0.0).sqrt());
    }
    &eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

#[derive(Debug, Clone)]
pub struct UnitaryOp {
    pub matrix: CMat,
    pub label: String,
}

impl UnitaryOp {
    pub fn new(matrix: CMat, label: impl Into<String>) -> Result<Self, QuantumError> {
        let label = label.into();
        let dev = max_abs_diff(&(matrix.adjoint() * &matrix), &identity(matrix.ncols()));
        if dev > NORM_TOL {
            return Err(QuantumError::NotUnitary(dev, label));
        }
        Ok(Self { matrix, label })
    }

    /// Skips the unitarity check; for hot paths where the construction
    /// guarantees it (e.g. closed-form SU(2) exponentials).
    pub fn new_unchecked(matrix: CMat, label: impl Into<String>) -> Self {
        Self {
            matrix,
            label: label.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dagger(&self) -> Self {
        Self {
            matrix: self.matrix.adjoint(),
            label: format!("{}†", self.label),
        }
    }

    pub fn then(&self, next: &UnitaryOp) -> Result<Self, QuantumError> {
        if next.matrix.ncols() != self.matrix.nrows() {
            return Err(QuantumError::DimensionMismatch(
                next.matrix.ncols(),
                self.matrix.nrows(),
            ));
        }
        Ok(Self {
            matrix: &next.matrix * &self.matrix,
            label: format!("{};{}", self.label, next.label),
        })
    }

    /// Embed a k-qubit unitary acting on `targets` (chain indices) into an
    /// n-qubit register, identity elsewhere. Ion 0 is the most significant bit.
    pub fn embed(&self, targets: &[usize], qubit_count: usize) -> Result<Self, QuantumError> {
        let k = targets.len();
        if self.dim() != 1 << k {
            return Err(QuantumError::DimensionMismatch(self.dim(), 1 << k));
        }
        for &t in targets {
            if t >= qubit_count {
                return Err(QuantumError::BadSubsystem(t, qubit_count));
            }
        }
        let dim = 1usize << qubit_count;
        let mut out = CMat::zeros(dim, dim);
        // bit of ion q within a full index (MSB-first)
        let bit = |index: usize, q: usize| (index >> (qubit_count - 1 - q)) & 1;
        for col in 0..dim {
            let sub_col: usize = targets.iter().fold(0, |acc, &q| (acc << 1) | bit(col, q));
            let rest = col;
            for sub_row in 0..(1 << k) {
                let mut row = rest;
                for (pos, &q) in targets.iter().enumerate() {
                    let b = (sub_row >> (k - 1 - pos)) & 1;
                    let shift = qubit_count - 1 - q;
                    row = (row & !(1 << shift)) | (b << shift);
                }
                let v = self.matrix[(sub_row, sub_col)];
                if v.norm_sqr() > 0.0 {
                    out[(row, col)] += v;
                }
            }
        }
        Ok(Self {
            matrix: out,
            label: format!("{}@{targets:?}", self.label),
        })
    }
}

/// Kronecker product keeping the operator-or-state bookkeeping on unitaries.
pub fn tensor(a: &UnitaryOp, b: &UnitaryOp) -> Result<UnitaryOp, QuantumError> {
    Ok(UnitaryOp {
        matrix: kron(&a.matrix, &b.matrix)?,
        label: format!("{}⊗{}", a.label, b.label),
    })
}

pub fn tensor_states(a: &StateVector, b: &StateVector) -> Result<StateVector, QuantumError> {
    Ok(StateVector {
        amplitudes: kron_vec(&a.amplitudes, &b.amplitudes)?,
        qubit_count: a.qubit_count + b.qubit_count,
        fock_dim: a.fock_dim * b.fock_dim,
    })
}

pub fn tensor_density(a: &DensityMatrix, b: &DensityMatrix) -> Result<DensityMatrix, QuantumError> {
    Ok(DensityMatrix {
        matrix: kron(&a.matrix, &b.matrix)?,
        qubit_count: a.qubit_count + b.qubit_count,
        fock_dim: a.fock_dim * b.fock_dim,
    })
}

/// Partial trace over qubit subsystems, keeping the (chain-index) set `keep`.
///
/// The Fock factor, when present, is always traced out.
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix, QuantumError> {
    if keep.is_empty() {
        return Err(QuantumError::EmptyKeep);
    }
    let n = rho.qubit_count;
    for &k in keep {
        if k >= n {
            return Err(QuantumError::BadSubsystem(k, n));
        }
    }
    let mut keep = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();
    let kd = 1usize << keep.len();
    let traced: Vec<usize> = (0..n).filter(|q| !keep.contains(q)).collect();
    let td = 1usize << traced.len();
    let f = rho.fock_dim;
    let bit = |index: usize, q: usize| (index >> (n - 1 - q)) & 1;
    let mut out = CMat::zeros(kd, kd);
    for kr in 0..kd {
        for kc in 0..kd {
            let mut acc = cr(0.0);
            for t in 0..td {
                for ph in 0..f {
                    let assemble = |kbits: usize| -> usize {
                        let mut idx = 0usize;
                        for q in 0..n {
                            let b = if let Some(pos) = keep.iter().position(|&x| x == q) {
                                (kbits >> (keep.len() - 1 - pos)) & 1
                            } else {
                                let pos = traced.iter().position(|&x| x == q).unwrap();
                                (t >> (traced.len() - 1 - pos)) & 1
                            };
                            idx = (idx << 1) | b;
                        }
                        idx * f + ph
                    };
                    acc += rho.matrix[(assemble(kr), assemble(kc))];
                }
            }
            out[(kr, kc)] = acc;
        }
    }
    let _ = bit;
    Ok(DensityMatrix {
        matrix: out,
        qubit_count: keep.len(),
        fock_dim: 1,
    })
}

/// Trace out the Fock factor only, keeping all spins.
pub fn trace_out_fock(rho: &DensityMatrix) -> DensityMatrix {
    let spin_dim = 1usize << rho.qubit_count;
    let f = rho.fock_dim;
    let mut out = CMat::zeros(spin_dim, spin_dim);
    for i in 0..spin_dim {
        for j in 0..spin_dim {
            let mut acc = cr(0.0);
            for ph in 0..f {
                acc += rho.matrix[(i * f + ph, j * f + ph)];
            }
            out[(i, j)] = acc;
        }
    }
    DensityMatrix {
        matrix: out,
        qubit_count: rho.qubit_count,
        fock_dim: 1,
    }
}

/// Squared-overlap (probability) fidelity between two states.
///
/// Pure/pure: |⟨a|b⟩|²; mixed/pure: ⟨b|ρ|b⟩; mixed/mixed: Uhlmann fidelity
/// in the squared convention (Tr√(√a b √a))².
pub fn fidelity_states(a: &StateVector, b: &StateVector) -> Result<f64, QuantumError> {
    if a.dim() != b.dim() {
        return Err(QuantumError::DimensionMismatch(a.dim(), b.dim()));
    }
    let ip: C64 = a
        .amplitudes
        .iter()
        .zip(b.amplitudes.iter())
        .map(|(x, y)| x.conj() * y)
        .sum();
    Ok(ip.norm_sqr())
}

pub fn fidelity_dm_pure(rho: &DensityMatrix, b: &StateVector) -> Result<f64, QuantumError> {
    if rho.dim() != b.dim() {
        return Err(QuantumError::DimensionMismatch(rho.dim(), b.dim()));
    }
    let v = &rho.matrix * &b.amplitudes;
    let f: C64 = b
        .amplitudes
        .iter()
        .zip(v.iter())
        .map(|(x, y)| x.conj() * y)
        .sum();
    Ok(f.re.clamp(0.0, 1.0))
}

pub fn fidelity_dm_dm(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64, QuantumError> {
    if a.dim() != b.dim() {
        return Err(QuantumError::DimensionMismatch(a.dim(), b.dim()));
    }
    let sa = hermitian_sqrt(&a.matrix);
    let inner = &sa * &b.matrix * &sa;
    let s = hermitian_sqrt(&inner);
    let tr = s.trace().re;
    Ok((tr * tr).clamp(0.0, 1.0))
}

/// Shannon entropy in bits; 0·log0 = 0.
pub fn shannon_entropy(p: &[f64]) -> Result<f64, QuantumError> {
    let mut sum = 0.0;
    for &x in p {
        if x < -1e-12 {
            return Err(QuantumError::BadProbabilities(format!(
                "negative entry {x:.3e}"
            )));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(QuantumError::BadProbabilities(format!(
            "sum {sum:.12} != 1"
        )));
    }
    let mut h = 0.0;
    for &x in p {
        if x > 0.0 {
            h -= x * x.log2();
        }
    }
    Ok(h)
}

/// Format a basis index as a bit string, ion 0 first.
pub fn bits_of_index(index: usize, qubit_count: usize) -> String {
    (0..qubit_count)
        .map(|q| {
            if (index >> (qubit_count - 1 - q)) & 1 == 1 {
                '1'
            } else {
                '0'
            }
        })
        .collect()
}

pub fn index_of_bits(bits: &str) -> usize {
    bits.chars().fold(0, |acc, ch| (acc << 1) | (ch == '1') as usize)
}
