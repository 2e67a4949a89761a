#pragma once

// Dense primal-dual interior-point method for cone programs
//
//   minimize    c'x
//   subject to  A x = b
//               G x + s = h,   s in K = R+^l x Q^{d1} x ... x Q^{dN}
//
// with Q^d the second-order cone {(t,u) : t >= ||u||}. Nesterov-Todd scaling,
// Mehrotra predictor-corrector, infeasible start. Sized for small dense
// instances (tens to a few hundred variables).

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridmatch {

struct ConeProgram {
    Eigen::VectorXd c;
    Eigen::MatrixXd A;
    Eigen::VectorXd b;
    Eigen::MatrixXd G;
    Eigen::VectorXd h;
    int nonneg = 0;        // leading nonnegative-orthant dimension of K
    std::vector<int> soc;  // second-order cone block sizes (each >= 2)
};

struct ConeSettings {
    double tol_feas = 1e-8;
    double tol_gap = 1e-8;
    int max_iter = 200;
};

enum class ConeStatus { Optimal, Infeasible, Unbounded, IterationLimit };

inline const char* cone_status_name(ConeStatus s) {
    switch (s) {
        case ConeStatus::Optimal: return "optimal";
        case ConeStatus::Infeasible: return "infeasible";
        case ConeStatus::Unbounded: return "unbounded";
        default: return "iteration-limit";
    }
}

struct ConeSolution {
    ConeStatus status = ConeStatus::IterationLimit;
    Eigen::VectorXd x, s, y, z;
    double obj = 0.0;
    double gap = 0.0, pres = 0.0, dres = 0.0;
    int iterations = 0;
};

namespace conic_detail {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Nesterov-Todd scaling point data: diagonal for the orthant, small dense
// blocks for each second-order cone. W z = lambda = W^{-1} s.
struct Scaling {
    VectorXd w_lp;  // diagonal of W on the orthant part
    std::vector<MatrixXd> w_soc, winv_soc, w2_soc;
    VectorXd lambda;
};

inline double soc_resid(const VectorXd& u) {  // t - ||rest||, >0 iff interior
    return u(0) - u.tail(u.size() - 1).norm();
}

inline double jnorm_sq(const VectorXd& u) {  // u'Ju
    return u(0) * u(0) - u.tail(u.size() - 1).squaredNorm();
}

inline VectorXd jmul(const VectorXd& u) {  // J u
    VectorXd r = -u;
    r(0) = u(0);
    return r;
}

inline Scaling compute_scaling(const ConeProgram& p, const VectorXd& s, const VectorXd& z) {
    Scaling sc;
    int m = (int)s.size();
    sc.lambda.resize(m);
    sc.w_lp.resize(p.nonneg);
    for (int i = 0; i < p.nonneg; ++i) {
        if (!(s(i) > 0) || !(z(i) > 0)) throw std::runtime_error("scaling point left the cone");
        sc.w_lp(i) = std::sqrt(s(i) / z(i));
        sc.lambda(i) = std::sqrt(s(i) * z(i));
    }
    int off = p.nonneg;
    for (int d : p.soc) {
        VectorXd sb = s.segment(off, d), zb = z.segment(off, d);
        double sj = jnorm_sq(sb), zj = jnorm_sq(zb);
        if (!(sj > 0) || !(zj > 0) || !(sb(0) > 0) || !(zb(0) > 0))
            throw std::runtime_error("scaling point left the cone");
        VectorXd sbar = sb / std::sqrt(sj), zbar = zb / std::sqrt(zj);
        double gamma = std::sqrt((1.0 + sbar.dot(zbar)) / 2.0);
        // half-angle vector: the reflection 2vv'-J must be the square root of
        // the map taking zbar to sbar, so that W^2 z = s
        VectorXd v = (sbar + jmul(zbar)) / (2.0 * gamma);
        v(0) += 1.0;
        v /= std::sqrt(2.0 * v(0));
        double eta = std::pow(sj / zj, 0.25);

        MatrixXd J = -MatrixXd::Identity(d, d);
        J(0, 0) = 1.0;
        MatrixXd W = eta * (2.0 * v * v.transpose() - J);
        MatrixXd Winv = (2.0 * (J * v) * (v.transpose() * J) - J) / eta;
        sc.w_soc.push_back(W);
        sc.winv_soc.push_back(Winv);
        sc.w2_soc.push_back(W * W);
        sc.lambda.segment(off, d) = W * zb;
        off += d;
    }
    return sc;
}

inline VectorXd w_apply(const ConeProgram& p, const Scaling& sc, const VectorXd& u) {
    VectorXd r(u.size());
    r.head(p.nonneg) = sc.w_lp.cwiseProduct(u.head(p.nonneg));
    int off = p.nonneg;
    for (std::size_t k = 0; k < p.soc.size(); ++k) {
        int d = p.soc[k];
        r.segment(off, d) = sc.w_soc[k] * u.segment(off, d);
        off += d;
    }
    return r;
}

inline VectorXd winv_apply(const ConeProgram& p, const Scaling& sc, const VectorXd& u) {
    VectorXd r(u.size());
    r.head(p.nonneg) = u.head(p.nonneg).cwiseQuotient(sc.w_lp);
    int off = p.nonneg;
    for (std::size_t k = 0; k < p.soc.size(); ++k) {
        int d = p.soc[k];
        r.segment(off, d) = sc.winv_soc[k] * u.segment(off, d);
        off += d;
    }
    return r;
}

// Jordan product u o v per cone block.
inline VectorXd jordan_mul(const ConeProgram& p, const VectorXd& u, const VectorXd& v) {
    VectorXd r(u.size());
    r.head(p.nonneg) = u.head(p.nonneg).cwiseProduct(v.head(p.nonneg));
    int off = p.nonneg;
    for (int d : p.soc) {
        auto ub = u.segment(off, d);
        auto vb = v.segment(off, d);
        r(off) = ub.dot(vb);
        r.segment(off + 1, d - 1) = ub(0) * vb.segment(1, d - 1) + vb(0) * ub.segment(1, d - 1);
        off += d;
    }
    return r;
}

// Solve lambda o v = u (arrow-matrix inverse on each block).
inline VectorXd jordan_div(const ConeProgram& p, const VectorXd& lambda, const VectorXd& u) {
    VectorXd r(u.size());
    r.head(p.nonneg) = u.head(p.nonneg).cwiseQuotient(lambda.head(p.nonneg));
    int off = p.nonneg;
    for (int d : p.soc) {
        double a = lambda(off);
        auto bvec = lambda.segment(off + 1, d - 1);
        double det = a * a - bvec.squaredNorm();
        if (det <= 0 || a <= 0) throw std::runtime_error("singular Jordan division");
        double r0 = (a * u(off) - bvec.dot(u.segment(off + 1, d - 1))) / det;
        r(off) = r0;
        r.segment(off + 1, d - 1) = (u.segment(off + 1, d - 1) - r0 * bvec) / a;
        off += d;
    }
    return r;
}

inline VectorXd cone_identity(const ConeProgram& p, int m) {
    VectorXd e = VectorXd::Zero(m);
    e.head(p.nonneg).setOnes();
    int off = p.nonneg;
    for (int d : p.soc) {
        e(off) = 1.0;
        off += d;
    }
    return e;
}

// Largest alpha >= 0 with u + t*du in K for all t in [0, alpha]; u interior.
inline double max_step(const ConeProgram& p, const VectorXd& u, const VectorXd& du) {
    double alpha = std::numeric_limits<double>::infinity();
    for (int i = 0; i < p.nonneg; ++i)
        if (du(i) < 0) alpha = std::min(alpha, -u(i) / du(i));
    int off = p.nonneg;
    for (int d : p.soc) {
        VectorXd ub = u.segment(off, d), db = du.segment(off, d);
        off += d;
        // roots of (u0+t d0)^2 - ||u1+t d1||^2 = a t^2 + 2 b t + c
        double a = db(0) * db(0) - db.tail(d - 1).squaredNorm();
        double bq = ub(0) * db(0) - ub.tail(d - 1).dot(db.tail(d - 1));
        double cq = jnorm_sq(ub);
        if (a == 0.0) {
            if (bq < 0) alpha = std::min(alpha, -cq / (2.0 * bq));
            continue;
        }
        double disc = bq * bq - a * cq;
        if (disc < 0) continue;  // never touches the boundary
        // cancellation-free root pair: q/a and c/q
        double qv = -(bq + std::copysign(std::sqrt(disc), bq));
        for (double t : {qv != 0.0 ? cq / qv : -1.0, qv / a})
            if (t > 0) alpha = std::min(alpha, t);
    }
    return alpha;
}

inline bool in_cone(const ConeProgram& p, const VectorXd& u, double tol) {
    for (int i = 0; i < p.nonneg; ++i)
        if (u(i) < -tol) return false;
    int off = p.nonneg;
    for (int d : p.soc) {
        if (soc_resid(u.segment(off, d)) < -tol) return false;
        off += d;
    }
    return true;
}

// Strict interiority, the precondition of the scaling-point computation.
inline bool strictly_interior(const ConeProgram& p, const VectorXd& u) {
    for (int i = 0; i < p.nonneg; ++i)
        if (!(u(i) > 0)) return false;
    int off = p.nonneg;
    for (int d : p.soc) {
        if (!(u(off) > 0) || !(jnorm_sq(u.segment(off, d)) > 0)) return false;
        off += d;
    }
    return true;
}

}  // namespace conic_detail

inline ConeSolution solve_cone(const ConeProgram& prog, const ConeSettings& cfg = {}) {
    using namespace conic_detail;
    using Eigen::MatrixXd;
    using Eigen::VectorXd;

    const int n = (int)prog.c.size();
    const int p = (int)prog.b.size();
    const int m = (int)prog.h.size();
    int cone_dim = prog.nonneg;
    for (int d : prog.soc) {
        if (d < 2) throw std::runtime_error("SOC block must have dimension >= 2");
        cone_dim += d;
    }
    if (cone_dim != m || (int)prog.G.rows() != m || (int)prog.G.cols() != n)
        throw std::runtime_error("cone program dimensions inconsistent");
    if ((int)prog.A.rows() != p || (p > 0 && (int)prog.A.cols() != n))
        throw std::runtime_error("equality block dimensions inconsistent");
    if (m == 0) throw std::runtime_error("empty cone");
    const double m_deg = prog.nonneg + (double)prog.soc.size();

    const int dim = n + p + m;
    auto assemble = [&](const Scaling* sc) {
        MatrixXd K = MatrixXd::Zero(dim, dim);
        if (p > 0) {
            K.block(0, n, n, p) = prog.A.transpose();
            K.block(n, 0, p, n) = prog.A;
        }
        K.block(0, n + p, n, m) = prog.G.transpose();
        K.block(n + p, 0, m, n) = prog.G;
        if (sc) {
            for (int i = 0; i < prog.nonneg; ++i) {
                double w = sc->w_lp(i);
                K(n + p + i, n + p + i) = -w * w;
            }
            int off = prog.nonneg;
            for (std::size_t k = 0; k < prog.soc.size(); ++k) {
                int d = prog.soc[k];
                K.block(n + p + off, n + p + off, d, d) = -sc->w2_soc[k];
                off += d;
            }
        } else {
            K.block(n + p, n + p, m, m) = -MatrixXd::Identity(m, m);
        }
        return K;
    };

    auto solve_kkt = [&](const Eigen::PartialPivLU<MatrixXd>& lu, const MatrixXd& K,
                         const VectorXd& rhs) {
        VectorXd sol = lu.solve(rhs);
        sol += lu.solve(rhs - K * sol);  // one refinement pass
        if (!sol.allFinite()) throw std::runtime_error("KKT solve produced non-finite values");
        return sol;
    };

    // --- initialization: two solves with W = I, then shift into the cone
    MatrixXd K0 = assemble(nullptr);
    Eigen::PartialPivLU<MatrixXd> lu0(K0);
    VectorXd rhs = VectorXd::Zero(dim);
    if (p > 0) rhs.segment(n, p) = prog.b;
    rhs.tail(m) = prog.h;
    VectorXd sol = solve_kkt(lu0, K0, rhs);
    VectorXd x = sol.head(n);
    VectorXd s = -sol.tail(m);  // = h - G x as the KKT residual block

    rhs.setZero();
    rhs.head(n) = -prog.c;
    sol = solve_kkt(lu0, K0, rhs);
    VectorXd y = p > 0 ? sol.segment(n, p) : VectorXd();
    VectorXd z = sol.tail(m);

    VectorXd e = cone_identity(prog, m);
    auto shift_into_cone = [&](VectorXd& u) {
        double worst = 0.0;
        for (int i = 0; i < prog.nonneg; ++i) worst = std::min(worst, u(i));
        int off = prog.nonneg;
        for (int d : prog.soc) {
            worst = std::min(worst, soc_resid(u.segment(off, d)));
            off += d;
        }
        if (worst <= 0) u += (1.0 - worst) * e;
    };
    shift_into_cone(s);
    shift_into_cone(z);

    ConeSolution out;
    const double bnorm = std::max(1.0, prog.b.size() ? prog.b.norm() : 0.0);
    const double hnorm = std::max(1.0, prog.h.norm());
    const double cnorm = std::max(1.0, prog.c.norm());

    for (int iter = 0; iter <= cfg.max_iter; ++iter) {
        VectorXd rx = prog.G.transpose() * z + prog.c;
        if (p > 0) rx += prog.A.transpose() * y;
        VectorXd ry = p > 0 ? VectorXd(prog.A * x - prog.b) : VectorXd();
        VectorXd rz = prog.G * x + s - prog.h;

        double gap = s.dot(z);
        double pobj = prog.c.dot(x);
        double dobj = -(p > 0 ? prog.b.dot(y) : 0.0) - prog.h.dot(z);
        double pres = std::max(p > 0 ? ry.norm() / bnorm : 0.0, rz.norm() / hnorm);
        double dres = rx.norm() / cnorm;
        double relgap = std::abs(pobj - dobj) / std::max(1.0, std::abs(pobj));

        out.x = x;
        out.s = s;
        out.y = y;
        out.z = z;
        out.obj = pobj;
        out.gap = gap;
        out.pres = pres;
        out.dres = dres;
        out.iterations = iter;

        if (pres <= cfg.tol_feas && dres <= cfg.tol_feas && relgap <= cfg.tol_gap) {
            out.status = ConeStatus::Optimal;
            return out;
        }
        // Farkas-type certificates, tested on normalized candidates.
        double cert_p = -((p > 0 ? prog.b.dot(y) : 0.0) + prog.h.dot(z));
        if (cert_p > 0) {
            VectorXd zc = z / cert_p;
            VectorXd hres = prog.G.transpose() * zc;
            if (p > 0) hres += prog.A.transpose() * (y / cert_p);
            if (hres.norm() <= cfg.tol_feas && in_cone(prog, zc, cfg.tol_feas)) {
                out.status = ConeStatus::Infeasible;
                return out;
            }
        }
        if (pobj < 0) {
            VectorXd xc = x / (-pobj), sc2 = s / (-pobj);
            double r1 = p > 0 ? (prog.A * xc).norm() : 0.0;
            double r2 = (prog.G * xc + sc2).norm();
            if (r1 <= cfg.tol_feas && r2 <= cfg.tol_feas && in_cone(prog, sc2, cfg.tol_feas)) {
                out.status = ConeStatus::Unbounded;
                return out;
            }
        }
        if (iter == cfg.max_iter) break;

        double mu = gap / m_deg;
        Scaling sc = compute_scaling(prog, s, z);
        MatrixXd K = assemble(&sc);
        Eigen::PartialPivLU<MatrixXd> lu(K);

        auto direction = [&](const VectorXd& d_c) {
            VectorXd r = VectorXd::Zero(dim);
            r.head(n) = -rx;
            if (p > 0) r.segment(n, p) = -ry;
            r.tail(m) = -rz - w_apply(prog, sc, jordan_div(prog, sc.lambda, d_c));
            VectorXd dsol = solve_kkt(lu, K, r);
            struct Dir {
                VectorXd dx, dy, dz, ds;
            } dir;
            dir.dx = dsol.head(n);
            dir.dy = p > 0 ? dsol.segment(n, p) : VectorXd();
            dir.dz = dsol.tail(m);
            dir.ds = -rz - prog.G * dir.dx;
            return dir;
        };

        // predictor
        VectorXd ll = jordan_mul(prog, sc.lambda, sc.lambda);
        auto aff = direction(-ll);
        double a_aff = std::min({1.0, max_step(prog, s, aff.ds), max_step(prog, z, aff.dz)});
        double gap_aff = (s + a_aff * aff.ds).dot(z + a_aff * aff.dz);
        double sigma = std::pow(std::clamp(gap_aff / gap, 0.0, 1.0), 3.0);

        // corrector
        VectorXd cross = jordan_mul(prog, winv_apply(prog, sc, aff.ds), w_apply(prog, sc, aff.dz));
        auto dir = direction(sigma * mu * e - ll - cross);
        double a = std::min({1.0, 0.99 * max_step(prog, s, dir.ds), 0.99 * max_step(prog, z, dir.dz)});
        // retreat if roundoff in the boundary roots pushed the step too far
        for (int bt = 0; bt < 40; ++bt) {
            if (strictly_interior(prog, s + a * dir.ds) && strictly_interior(prog, z + a * dir.dz))
                break;
            a *= 0.5;
        }

        x += a * dir.dx;
        if (p > 0) y += a * dir.dy;
        s += a * dir.ds;
        z += a * dir.dz;
        if (!x.allFinite() || !s.allFinite() || !z.allFinite() || gap > 1e32)
            throw std::runtime_error("interior point diverged");
    }
    out.status = ConeStatus::IterationLimit;
    return out;
}

}  // namespace gridmatch
