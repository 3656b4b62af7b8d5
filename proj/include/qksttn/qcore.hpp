#pragma once

// Deterministic complex linear algebra and quantum primitives shared by the
// encoding, tree network, training and oracle layers. Conventions:
//   - basis indices are big-endian over tensor factors (the first factor of
//     a Kronecker product owns the most significant bits),
//   - node unitaries are parameterized as U = exp(iH) with H a traceless
//     Hermitian combination of generalized Gell-Mann generators,
//   - two-subsystem nodes keep the FIRST subsystem and trace out the second.

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <vector>

#include "qksttn/common.hpp"

namespace qksttn {

using cxd = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;

inline constexpr double kHermTol = 1e-10;

struct DensityMatrix {
    CMat m;

    Eigen::Index dim() const { return m.rows(); }

    static DensityMatrix pure(const CVec& psi) {
        DensityMatrix rho;
        rho.m = psi * psi.adjoint();
        return rho;
    }
    static DensityMatrix basis_state(Eigen::Index dim, Eigen::Index k) {
        DensityMatrix rho;
        rho.m = CMat::Zero(dim, dim);
        rho.m(k, k) = 1.0;
        return rho;
    }
    static DensityMatrix maximally_mixed(Eigen::Index dim) {
        DensityMatrix rho;
        rho.m = CMat::Identity(dim, dim) / double(dim);
        return rho;
    }
};

struct Unitary {
    CMat m;
    Eigen::Index dim() const { return m.rows(); }
};

inline double max_abs(const CMat& a) { return a.cwiseAbs().maxCoeff(); }

inline bool is_hermitian(const CMat& a, double tol = kHermTol) {
    return a.rows() == a.cols() && max_abs(a - a.adjoint()) <= tol;
}

inline bool is_unitary(const CMat& u, double tol = 1e-12) {
    if (u.rows() != u.cols()) return false;
    CMat d = u.adjoint() * u - CMat::Identity(u.rows(), u.cols());
    return max_abs(d) <= tol;
}

// Validity of a density matrix per the module invariants: Hermitian to
// 1e-12, unit trace to 1e-12, smallest eigenvalue >= -1e-10.
inline bool is_valid_density(const CMat& rho, double herm_tol = 1e-12,
                             double trace_tol = 1e-12, double psd_tol = 1e-10) {
    if (rho.rows() != rho.cols()) return false;
    if (max_abs(rho - rho.adjoint()) > herm_tol) return false;
    if (std::abs(rho.trace().real() - 1.0) > trace_tol ||
        std::abs(rho.trace().imag()) > trace_tol)
        return false;
    Eigen::SelfAdjointEigenSolver<CMat> es(0.5 * (rho + rho.adjoint()),
                                           Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff() >= -psd_tol;
}

// ---------------------------------------------------------------------------
// Generalized Gell-Mann generator basis of su(d): d^2-1 traceless Hermitian
// matrices with Tr(g_a g_b) = 2 delta_ab. Enumeration order: all symmetric
// off-diagonal generators (pairs (j,k), j<k, row-major), then all
// antisymmetric ones in the same pair order, then the d-1 diagonal ones.
// For d=2 this is exactly (sigma_x, sigma_y, sigma_z).
// ---------------------------------------------------------------------------

inline Eigen::Index herm_param_count(Eigen::Index d) { return d * d - 1; }

inline CMat gellmann_generator(Eigen::Index d, Eigen::Index which) {
    const Eigen::Index npairs = d * (d - 1) / 2;
    CMat g = CMat::Zero(d, d);
    if (which < 2 * npairs) {
        Eigen::Index idx = which % npairs;
        bool antisym = which >= npairs;
        // decode row-major pair (j,k), j<k
        Eigen::Index j = 0, k = 0, c = 0;
        for (j = 0; j < d; ++j) {
            Eigen::Index row_pairs = d - 1 - j;
            if (idx < c + row_pairs) {
                k = j + 1 + (idx - c);
                break;
            }
            c += row_pairs;
        }
        if (!antisym) {
            g(j, k) = 1.0;
            g(k, j) = 1.0;
        } else {
            g(j, k) = cxd(0, -1);
            g(k, j) = cxd(0, 1);
        }
        return g;
    }
    Eigen::Index l = which - 2 * npairs + 1;  // 1..d-1
    double norm = std::sqrt(2.0 / double(l * (l + 1)));
    for (Eigen::Index j = 0; j < l; ++j) g(j, j) = norm;
    g(l, l) = -norm * double(l);
    return g;
}

// H = sum_a v_a g_a: linear, injective, traceless Hermitian by construction.
inline CMat herm_from_params(const RVec& v, Eigen::Index d) {
    if (v.size() != herm_param_count(d))
        throw shape_error("herm_from_params: expected " +
                          std::to_string(herm_param_count(d)) +
                          " parameters for dim " + std::to_string(d) + ", got " +
                          std::to_string(v.size()));
    const Eigen::Index npairs = d * (d - 1) / 2;
    CMat h = CMat::Zero(d, d);
    Eigen::Index a = 0;
    for (Eigen::Index j = 0; j < d; ++j)
        for (Eigen::Index k = j + 1; k < d; ++k, ++a) {
            h(j, k) += v[a];
            h(k, j) += v[a];
        }
    a = npairs;
    for (Eigen::Index j = 0; j < d; ++j)
        for (Eigen::Index k = j + 1; k < d; ++k, ++a) {
            h(j, k) += cxd(0, -v[a]);
            h(k, j) += cxd(0, v[a]);
        }
    for (Eigen::Index l = 1; l < d; ++l) {
        double norm = std::sqrt(2.0 / double(l * (l + 1)));
        double c = v[2 * npairs + l - 1];
        for (Eigen::Index j = 0; j < l; ++j) h(j, j) += c * norm;
        h(l, l) -= c * norm * double(l);
    }
    return h;
}

// Inverse of herm_from_params on traceless Hermitian input: v_a=Tr(H g_a)/2.
inline RVec params_from_herm(const CMat& h) {
    const Eigen::Index d = h.rows();
    const Eigen::Index npairs = d * (d - 1) / 2;
    RVec v(herm_param_count(d));
    Eigen::Index a = 0;
    for (Eigen::Index j = 0; j < d; ++j)
        for (Eigen::Index k = j + 1; k < d; ++k, ++a) {
            v[a] = 0.5 * (h(j, k) + h(k, j)).real();
            v[npairs + a] = 0.5 * (cxd(0, 1) * h(j, k) - cxd(0, 1) * h(k, j)).real();
        }
    for (Eigen::Index l = 1; l < d; ++l) {
        double norm = std::sqrt(2.0 / double(l * (l + 1)));
        cxd s = 0;
        for (Eigen::Index j = 0; j < l; ++j) s += h(j, j);
        s -= double(l) * h(l, l);
        v[2 * npairs + l - 1] = 0.5 * (s * norm).real();
    }
    return v;
}

// Eigendecomposition of a Hermitian matrix, reused by the matrix exponential
// and its directional (Daleckii-Krein) derivative in the gradient pass.
struct HermEig {
    RVec evals;
    CMat evecs;
};

inline HermEig eig_hermitian(const CMat& h) {
    if (!is_hermitian(h, kHermTol))
        throw domain_error("eig_hermitian: input is not Hermitian within 1e-10");
    Eigen::SelfAdjointEigenSolver<CMat> es(0.5 * (h + h.adjoint()));
    return HermEig{es.eigenvalues(), es.eigenvectors()};
}

inline Unitary expm_from_eig(const HermEig& e) {
    const Eigen::Index d = e.evals.size();
    CVec phases(d);
    for (Eigen::Index i = 0; i < d; ++i)
        phases[i] = std::polar(1.0, e.evals[i]);
    Unitary u;
    u.m = e.evecs * phases.asDiagonal() * e.evecs.adjoint();
    return u;
}

// U = exp(iH) for Hermitian H.
inline Unitary expm_hermitian(const CMat& h) { return expm_from_eig(eig_hermitian(h)); }

// Standard Kronecker product; the first argument owns the significant bits.
inline CMat kron(const CMat& a, const CMat& b) {
    CMat out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

enum class Subsystem { A, B };

// Tr_B (keep == A) or Tr_A (keep == B) of a dimA*dimB density matrix.
inline CMat partial_trace_mat(const CMat& rho, Subsystem keep, Eigen::Index dimA,
                              Eigen::Index dimB) {
    if (rho.rows() != dimA * dimB || rho.cols() != dimA * dimB)
        throw domain_error("partial_trace: dimension mismatch");
    if (keep == Subsystem::A) {
        CMat out = CMat::Zero(dimA, dimA);
        for (Eigen::Index i = 0; i < dimA; ++i)
            for (Eigen::Index j = 0; j < dimA; ++j)
                for (Eigen::Index k = 0; k < dimB; ++k)
                    out(i, j) += rho(i * dimB + k, j * dimB + k);
        return out;
    }
    CMat out = CMat::Zero(dimB, dimB);
    for (Eigen::Index k = 0; k < dimB; ++k)
        for (Eigen::Index l = 0; l < dimB; ++l)
            for (Eigen::Index i = 0; i < dimA; ++i)
                out(k, l) += rho(i * dimB + k, i * dimB + l);
    return out;
}

inline DensityMatrix partial_trace(const DensityMatrix& rho, Subsystem keep,
                                   Eigen::Index dimA, Eigen::Index dimB) {
    DensityMatrix out;
    out.m = partial_trace_mat(rho.m, keep, dimA, dimB);
    return out;
}

// One dissipative tree node: Tr_B[U (rhoA (x) rhoB) U+]. Contracted index
// by index against the factored product state, without ever forming the
// chi^2 x chi^2 intermediate; the defining dense composition lives in the
// test oracle.
inline DensityMatrix apply_node(const Unitary& u, const DensityMatrix& rhoA,
                                const DensityMatrix& rhoB) {
    const Eigen::Index chi = rhoA.dim();
    if (rhoB.dim() != chi || u.dim() != chi * chi)
        throw domain_error("apply_node: dimension mismatch");
    const Eigen::Index D = chi * chi;
    // t1[(a,b),(d,g)] = sum_f U[(a,b),(f,g)] rhoA[f,d]
    CMat t1(D, D);
    for (Eigen::Index ab = 0; ab < D; ++ab)
        for (Eigen::Index d = 0; d < chi; ++d)
            for (Eigen::Index g = 0; g < chi; ++g) {
                cxd acc = 0;
                for (Eigen::Index f = 0; f < chi; ++f)
                    acc += u.m(ab, f * chi + g) * rhoA.m(f, d);
                t1(ab, d * chi + g) = acc;
            }
    // m[(a,b),(d,e)] = sum_g t1[(a,b),(d,g)] rhoB[g,e]  (= U (rhoA (x) rhoB))
    CMat m(D, D);
    for (Eigen::Index ab = 0; ab < D; ++ab)
        for (Eigen::Index d = 0; d < chi; ++d)
            for (Eigen::Index e = 0; e < chi; ++e) {
                cxd acc = 0;
                for (Eigen::Index g = 0; g < chi; ++g)
                    acc += t1(ab, d * chi + g) * rhoB.m(g, e);
                m(ab, d * chi + e) = acc;
            }
    // out[a,c] = sum_{b,q} m[(a,b),q] conj(U[(c,b),q])
    DensityMatrix out;
    out.m = CMat::Zero(chi, chi);
    for (Eigen::Index a = 0; a < chi; ++a)
        for (Eigen::Index c = 0; c < chi; ++c) {
            cxd acc = 0;
            for (Eigen::Index b = 0; b < chi; ++b)
                for (Eigen::Index q = 0; q < D; ++q)
                    acc += m(a * chi + b, q) * std::conj(u.m(c * chi + b, q));
            out.m(a, c) = acc;
        }
    out.m = 0.5 * (out.m + out.m.adjoint());  // scrub roundoff drift
    return out;
}

// Node application without the discard: U (rhoA (x) rhoB) U+. Used at the
// root when the readout measures all chi^2 outcomes of the top node.
inline DensityMatrix apply_node_wide(const Unitary& u, const DensityMatrix& rhoA,
                                     const DensityMatrix& rhoB) {
    const Eigen::Index chi = rhoA.dim();
    if (rhoB.dim() != chi || u.dim() != chi * chi)
        throw domain_error("apply_node_wide: dimension mismatch");
    DensityMatrix out;
    out.m = u.m * kron(rhoA.m, rhoB.m) * u.m.adjoint();
    out.m = 0.5 * (out.m + out.m.adjoint());
    return out;
}

// Haar-distributed unitary: QR of a complex Ginibre matrix with the
// R-diagonal phase correction (Mezzadri's recipe).
inline Unitary sample_cue(Eigen::Index dim, Rng& rng) {
    if (dim < 1) throw config_error("sample_cue: dim must be >= 1");
    CMat a(dim, dim);
    for (Eigen::Index i = 0; i < dim; ++i)
        for (Eigen::Index j = 0; j < dim; ++j)
            a(i, j) = cxd(rng.normal(), rng.normal()) / std::sqrt(2.0);
    Eigen::HouseholderQR<CMat> qr(a);
    CMat q = qr.householderQ();
    CMat r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < dim; ++j) {
        cxd rj = r(j, j);
        cxd phase = (std::abs(rj) > 0) ? rj / std::abs(rj) : cxd(1, 0);
        q.col(j) *= phase;
    }
    Unitary u;
    u.m = std::move(q);
    return u;
}

// Principal matrix logarithm of a unitary, returned as the traceless
// Hermitian H with eigenphases in (-pi, pi] and exp(iH) = U up to the
// removed global phase (exact equality when the phase sum is zero).
// Eigenphases within 1e-9 of the -pi branch cut are nudged deterministically.
inline CMat principal_log_unitary(const Unitary& u, bool* branch_cut_hit = nullptr) {
    if (!is_unitary(u.m, 1e-10))
        throw domain_error("principal_log_unitary: input is not unitary");
    const Eigen::Index d = u.dim();
    // Schur of a normal matrix: T is diagonal up to roundoff and Q is unitary,
    // which keeps the eigenbasis orthonormal even with degenerate phases.
    Eigen::ComplexSchur<CMat> schur(u.m);
    const CMat& q = schur.matrixU();
    RVec phases(d);
    bool hit = false;
    for (Eigen::Index i = 0; i < d; ++i) {
        double phi = std::arg(schur.matrixT()(i, i));
        if (phi <= -M_PI + 1e-9) {
            phi = -M_PI + 1e-9;
            hit = true;
        }
        phases[i] = phi;
    }
    if (branch_cut_hit) *branch_cut_hit = hit;
    double mean = phases.mean();
    CMat h = q * (phases.array() - mean).matrix().cast<cxd>().asDiagonal() * q.adjoint();
    return 0.5 * (h + h.adjoint());
}

}  // namespace qksttn
