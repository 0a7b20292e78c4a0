//! Amplitude encoding of descriptor vectors and a dense statevector
//! simulator.
//!
//! The gate set is RY rotations and CNOT, both real orthogonal matrices, so
//! the statevector stays real throughout. State preparation decomposes each
//! stage's uniformly controlled RY into a Gray-code sequence of CNOTs and
//! plain RY gates. For a vector with non-negative entries the prepared state
//! reproduces the amplitudes exactly; for mixed signs the basis
//! probabilities still match the squared inputs, only the signs are lost.
//!
//! Qubit 0 is the least significant bit of the basis index. Stage `k`
//! targets qubit `k-1`, conditioned on qubits `0..k-1`; its angles bisect
//! the probability mass of bit `k-1` for each assignment of the lower bits.
//! Memory for `n` qubits is one `f64` per basis state, hence the hard cap
//! of 20 qubits (8 MiB per state).

use serde::Serialize;
use thiserror::Error;

/// Hard upper bound on simulated register width.
pub const MAX_QUBITS: usize = 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QuantumError {
    #[error("amplitude vector is empty")]
    EmptyVector,
    #[error("amplitude vector has zero norm")]
    ZeroVector,
    #[error("{0} qubits exceed the {MAX_QUBITS}-qubit simulator cap")]
    TooManyQubits(usize),
}

/// Unit-norm amplitude vector over `2^n_qubits` basis states.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeVector {
    pub values: Vec<f64>,
    pub n_qubits: usize,
}

/// Normalizes `raw` into an amplitude vector, zero-padding to the next
/// power of two.
pub fn prepare_amplitudes(raw: &[f64]) -> Result<AmplitudeVector, QuantumError> {
    if raw.is_empty() {
        return Err(QuantumError::EmptyVector);
    }
    let n_qubits = raw.len().next_power_of_two().trailing_zeros() as usize;
    if n_qubits > MAX_QUBITS {
        return Err(QuantumError::TooManyQubits(n_qubits));
    }
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(QuantumError::ZeroVector);
    }
    let mut values = vec![0.0; 1 << n_qubits];
    for (slot, v) in values.iter_mut().zip(raw) {
        *slot = v / norm;
    }
    Ok(AmplitudeVector { values, n_qubits })
}

/// Rotation stage angles for state preparation.
///
/// `angles[k-1]` holds the `2^(k-1)` angles of stage `k`, indexed by the
/// assignment of qubits `0..k-1`. Each angle is
/// `2 * atan2(|mass with bit k-1 = 1|, |mass with bit k-1 = 0|)` over the
/// amplitude block selected by the lower bits, so non-negative input always
/// yields angles in `[0, pi]`.
pub fn mottonen_angles(a: &AmplitudeVector) -> Vec<Vec<f64>> {
    let n = a.n_qubits;
    let mut stages = Vec::with_capacity(n);
    for k in 1..=n {
        let low_mask = (1usize << (k - 1)) - 1;
        let mut stage = vec![0.0; 1 << (k - 1)];
        for (c, angle) in stage.iter_mut().enumerate() {
            let mut left = 0.0;
            let mut right = 0.0;
            for (b, &v) in a.values.iter().enumerate() {
                if b & low_mask != c {
                    continue;
                }
                if b >> (k - 1) & 1 == 0 {
                    left += v * v;
                } else {
                    right += v * v;
                }
            }
            *angle = 2.0 * right.sqrt().atan2(left.sqrt());
        }
        stages.push(stage);
    }
    stages
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "gate", rename_all = "snake_case")]
pub enum Gate {
    Ry { target: usize, angle: f64 },
    Cnot { control: usize, target: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantumCircuit {
    pub n_qubits: usize,
    pub gates: Vec<Gate>,
}

/// Builds the state-preparation circuit for `a`.
///
/// Stage 1 is a bare RY on qubit 0. Stage `k > 1` is a uniformly controlled
/// RY on qubit `k-1`, decomposed into `2^(k-1)` CNOT/RY pairs whose control
/// lines follow Gray-code transitions and whose angles are the Hadamard-type
/// transform of the stage angles. Gate totals are exactly `2^n - 1` RY and
/// `2^n - 2` CNOT.
pub fn build_mottonen_circuit(a: &AmplitudeVector) -> QuantumCircuit {
    let n = a.n_qubits;
    let stages = mottonen_angles(a);
    let mut gates = Vec::new();
    for (stage, thetas) in stages.iter().enumerate() {
        let k = stage + 1;
        let target = k - 1;
        let m = thetas.len();
        if m == 1 {
            gates.push(Gate::Ry {
                target,
                angle: thetas[0],
            });
            continue;
        }
        for i in 0..m {
            // First CNOT carries the Gray-code wrap bit so that control
            // masks cancel over the full block.
            let control_bit = if i == 0 {
                k - 2
            } else {
                i.trailing_zeros() as usize
            };
            gates.push(Gate::Cnot {
                control: control_bit,
                target,
            });
            // Sign mask for step i: wrap bit XOR Gray code of i.
            let mask = (1usize << (k - 2)) ^ (i ^ (i >> 1));
            let mut psi = 0.0;
            for (c, &theta) in thetas.iter().enumerate() {
                let sign = if (c & mask).count_ones() % 2 == 0 {
                    1.0
                } else {
                    -1.0
                };
                psi += sign * theta;
            }
            gates.push(Gate::Ry {
                target,
                angle: psi / m as f64,
            });
        }
    }
    QuantumCircuit { n_qubits: n, gates }
}

/// Dense real statevector over `2^n_qubits` basis states.
#[derive(Debug, Clone, PartialEq)]
pub struct Statevector {
    pub amplitudes: Vec<f64>,
    pub n_qubits: usize,
}

impl Statevector {
    /// The all-zeros basis state.
    pub fn zero(n_qubits: usize) -> Result<Statevector, QuantumError> {
        if n_qubits > MAX_QUBITS {
            return Err(QuantumError::TooManyQubits(n_qubits));
        }
        let mut amplitudes = vec![0.0; 1 << n_qubits];
        amplitudes[0] = 1.0;
        Ok(Statevector {
            amplitudes,
            n_qubits,
        })
    }
}

/// Applies one gate in place.
pub fn apply_gate(state: &mut Statevector, gate: Gate) {
    match gate {
        Gate::Ry { target, angle } => {
            assert!(target < state.n_qubits, "gate target out of range");
            let (s, c) = (angle / 2.0).sin_cos();
            let bit = 1usize << target;
            for i0 in 0..state.amplitudes.len() {
                if i0 & bit != 0 {
                    continue;
                }
                let i1 = i0 | bit;
                let a0 = state.amplitudes[i0];
                let a1 = state.amplitudes[i1];
                state.amplitudes[i0] = c * a0 - s * a1;
                state.amplitudes[i1] = s * a0 + c * a1;
            }
        }
        Gate::Cnot { control, target } => {
            assert!(
                control < state.n_qubits && target < state.n_qubits && control != target,
                "gate wires out of range"
            );
            let cbit = 1usize << control;
            let tbit = 1usize << target;
            for i in 0..state.amplitudes.len() {
                if i & cbit != 0 && i & tbit == 0 {
                    state.amplitudes.swap(i, i | tbit);
                }
            }
        }
    }
}

/// Runs `circuit` from the all-zeros state.
pub fn simulate(circuit: &QuantumCircuit) -> Result<Statevector, QuantumError> {
    let mut state = Statevector::zero(circuit.n_qubits)?;
    for &gate in &circuit.gates {
        apply_gate(&mut state, gate);
    }
    Ok(state)
}

/// Squared amplitudes per basis state.
pub fn basis_probabilities(state: &Statevector) -> Vec<f64> {
    state.amplitudes.iter().map(|a| a * a).collect()
}

/// Expectation of Pauli-Z per qubit; the |0> branch counts as +1.
pub fn z_expectations(state: &Statevector) -> Vec<f64> {
    let mut z = vec![0.0; state.n_qubits];
    for (b, &a) in state.amplitudes.iter().enumerate() {
        let p = a * a;
        for (q, zq) in z.iter_mut().enumerate() {
            if b >> q & 1 == 0 {
                *zq += p;
            } else {
                *zq -= p;
            }
        }
    }
    z
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CircuitStats {
    pub ry_count: usize,
    pub cnot_count: usize,
    pub depth: usize,
}

/// Gate counts plus circuit depth under per-qubit frontier scheduling: a
/// gate occupies layer `max(frontiers of its wires) + 1`.
pub fn circuit_stats(circuit: &QuantumCircuit) -> CircuitStats {
    let mut frontier = vec![0usize; circuit.n_qubits];
    let mut ry_count = 0;
    let mut cnot_count = 0;
    let mut depth = 0;
    for &gate in &circuit.gates {
        let layer = match gate {
            Gate::Ry { target, .. } => {
                ry_count += 1;
                frontier[target] + 1
            }
            Gate::Cnot { control, target } => {
                cnot_count += 1;
                frontier[control].max(frontier[target]) + 1
            }
        };
        match gate {
            Gate::Ry { target, .. } => frontier[target] = layer,
            Gate::Cnot { control, target } => {
                frontier[control] = layer;
                frontier[target] = layer;
            }
        }
        depth = depth.max(layer);
    }
    CircuitStats {
        ry_count,
        cnot_count,
        depth,
    }
}
