#include "vvo/nlp.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <limits>

// Primal-dual interior-point method on the slack reformulation
//
//   min f(x)  s.t.  c_eq(x) = 0,  c_ineq(x) - s = 0,  bounds on (x, s)
//
// with a logarithmic barrier for the bounds, damped Newton steps on the
// perturbed KKT system, inertia-corrected diagonal regularization, a filter
// line search and a monotone (Fiacco-McCormick) barrier schedule. Problems
// that supply eval_lag_hess get exact Newton steps; otherwise the Lagrangian
// curvature is approximated by a damped limited-memory BFGS held in compact
// form, whose low-rank correction enters the KKT solve through the
// Sherman-Morrison-Woodbury identity so the factorized matrix stays sparse.

namespace vvo {

const char* to_string(NlpStatus s) {
    switch (s) {
        case NlpStatus::LocallyOptimal: return "locally-optimal";
        case NlpStatus::MaxIterations: return "max-iterations";
        case NlpStatus::InfeasibleDetected: return "infeasible-detected";
        case NlpStatus::NumericalFailure: return "numerical-failure";
    }
    return "?";
}

double KktResiduals::max() const { return std::max({stationarity, primal, complementarity}); }

namespace {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double>;
using Trip = Eigen::Triplet<double>;

constexpr double kKappaSigma = 1e10;  // bound-multiplier safeguard window

struct Workspace {
    const NlpProblem& p;
    int nx, mi, me, nh, m;  // nh = nx + mi, m = me + mi

    Vec lo, up;                 // bounds on (x, s), relaxed where degenerate
    std::vector<char> has_lo, has_up;

    double s_obj = 1.0;
    Vec s_row;  // per-constraint scale

    // static Jacobian structure of [c_eq; c_ineq - s] over (x, s)
    std::vector<int> jr, jc;
    int nnz_user;  // entries backed by user callbacks (rest are slack -1s)

    Vec ceq_buf, cin_buf, jeq_buf, jin_buf;
    bool exact_hessian = false;
    std::vector<int> hr, hc;  // lower-triangle pattern over the x block
    Vec weq_buf, win_buf;

    explicit Workspace(const NlpProblem& prob)
        : p(prob),
          nx(prob.n_vars),
          mi(prob.n_ineq),
          me(prob.n_eq),
          nh(prob.n_vars + prob.n_ineq),
          m(prob.n_eq + prob.n_ineq) {
        lo.resize(nh);
        up.resize(nh);
        for (int i = 0; i < nx; ++i) {
            lo[i] = prob.lower[i];
            up[i] = prob.upper[i];
        }
        for (int k = 0; k < mi; ++k) {
            lo[nx + k] = prob.ineq_lower[k];
            up[nx + k] = prob.ineq_upper[k];
        }
        for (int i = 0; i < nh; ++i) {
            if (lo[i] >= up[i] - 1e-300) {  // fixed: relax to a thin interval
                const double eps = 1e-8 * std::max(1.0, std::abs(lo[i]));
                const double mid = lo[i];
                lo[i] = mid - eps;
                up[i] = mid + eps;
            }
        }
        has_lo.resize(nh);
        has_up.resize(nh);
        for (int i = 0; i < nh; ++i) {
            has_lo[i] = lo[i] > -kInf;
            has_up[i] = up[i] < kInf;
        }

        for (auto [r, c] : prob.eq_pattern) {
            jr.push_back(r);
            jc.push_back(c);
        }
        for (auto [r, c] : prob.ineq_pattern) {
            jr.push_back(me + r);
            jc.push_back(c);
        }
        nnz_user = (int)jr.size();
        for (int k = 0; k < mi; ++k) {
            jr.push_back(me + k);
            jc.push_back(nx + k);
        }
        s_row = Vec::Ones(m);
        ceq_buf.resize(me);
        cin_buf.resize(mi);
        jeq_buf.resize((int)prob.eq_pattern.size());
        jin_buf.resize((int)prob.ineq_pattern.size());

        exact_hessian = (bool)prob.eval_lag_hess;
        if (exact_hessian) {
            for (auto [r, c] : prob.lag_hess_pattern) {
                hr.push_back(std::max(r, c));
                hc.push_back(std::min(r, c));
            }
            weq_buf.resize(me);
            win_buf.resize(mi);
        }
    }

    std::span<const double> xpart(const Vec& xh) const { return {xh.data(), (size_t)nx}; }

    double eval_f(const Vec& xh) const {
        return p.objective ? s_obj * p.objective(xpart(xh)) : 0.0;
    }

    void eval_g(const Vec& xh, Vec& g) const {
        g.setZero(nh);
        if (p.gradient) {
            p.gradient(xpart(xh), {g.data(), (size_t)nx});
            g.head(nx) *= s_obj;
        }
    }

    void eval_c(const Vec& xh, Vec& c) {
        c.resize(m);
        if (me) p.eval_eq(xpart(xh), {ceq_buf.data(), (size_t)me});
        if (mi) p.eval_ineq(xpart(xh), {cin_buf.data(), (size_t)mi});
        for (int r = 0; r < me; ++r) c[r] = s_row[r] * ceq_buf[r];
        for (int k = 0; k < mi; ++k) c[me + k] = s_row[me + k] * (cin_buf[k] - xh[nx + k]);
    }

    void eval_jac(const Vec& xh, Vec& vals) {
        vals.resize((int)jr.size());
        if (me) p.eval_eq_jac(xpart(xh), {jeq_buf.data(), (size_t)jeq_buf.size()});
        if (mi) p.eval_ineq_jac(xpart(xh), {jin_buf.data(), (size_t)jin_buf.size()});
        int idx = 0;
        for (int k = 0; k < (int)jeq_buf.size(); ++k, ++idx) vals[idx] = s_row[jr[idx]] * jeq_buf[k];
        for (int k = 0; k < (int)jin_buf.size(); ++k, ++idx) vals[idx] = s_row[jr[idx]] * jin_buf[k];
        for (int k = 0; k < mi; ++k, ++idx) vals[idx] = -s_row[me + k];
    }

    // unscaled constraint violation, for the honest convergence test
    double unscaled_viol(const Vec& xh) {
        double v = 0.0;
        if (me) {
            p.eval_eq(xpart(xh), {ceq_buf.data(), (size_t)me});
            for (int r = 0; r < me; ++r) v = std::max(v, std::abs(ceq_buf[r]));
        }
        if (mi) {
            p.eval_ineq(xpart(xh), {cin_buf.data(), (size_t)mi});
            for (int k = 0; k < mi; ++k) {
                v = std::max(v, cin_buf[k] - p.ineq_upper[k]);
                v = std::max(v, p.ineq_lower[k] - cin_buf[k]);
            }
        }
        return v;
    }

    // exact Lagrangian Hessian at internal scaling: s_obj*f + (s_row.y).c
    void eval_hess(const Vec& xh, const Vec& y, Vec& vals) {
        vals.resize((int)hr.size());
        for (int r = 0; r < me; ++r) weq_buf[r] = y[r] * s_row[r];
        for (int k = 0; k < mi; ++k) win_buf[k] = y[me + k] * s_row[me + k];
        p.eval_lag_hess(xpart(xh), s_obj, {weq_buf.data(), (size_t)me},
                        {win_buf.data(), (size_t)mi}, {vals.data(), (size_t)vals.size()});
    }

    void at_y(const Vec& jvals, const Vec& y, Vec& out) const {
        out.setZero(nh);
        for (int k = 0; k < (int)jr.size(); ++k) out[jc[k]] += jvals[k] * y[jr[k]];
    }
};

// Compact damped L-BFGS approximation of the Lagrangian Hessian over the
// x block: B = sigma*I - W * Minv * W^T with W = [sigma*S, Y].
struct Lbfgs {
    int nx = 0;
    int mem = 25;
    double sigma = 1.0;
    std::deque<Vec> S, Y;

    void reset() {
        S.clear();
        Y.clear();
        sigma = 1.0;
    }

    int pairs() const { return (int)S.size(); }

    // middle matrix M = [[sigma S^T S, L], [L^T, -D]] with L_ij = s_i.y_j (i > j)
    Mat middle() const {
        const int q = pairs();
        Mat M = Mat::Zero(2 * q, 2 * q);
        for (int i = 0; i < q; ++i)
            for (int j = 0; j < q; ++j) M(i, j) = sigma * S[i].dot(S[j]);
        for (int i = 0; i < q; ++i)
            for (int j = 0; j < i; ++j) {
                M(i, q + j) = S[i].dot(Y[j]);
                M(q + j, i) = M(i, q + j);
            }
        for (int i = 0; i < q; ++i) M(q + i, q + i) = -S[i].dot(Y[i]);
        return M;
    }

    Mat wide() const {  // n x 2q matrix [sigma*S, Y]
        const int q = pairs();
        Mat W(nx, 2 * q);
        for (int i = 0; i < q; ++i) {
            W.col(i) = sigma * S[i];
            W.col(q + i) = Y[i];
        }
        return W;
    }

    Vec apply(const Vec& v) const {  // B v
        Vec out = sigma * v;
        const int q = pairs();
        if (q == 0) return out;
        Mat W = wide();
        Vec t = W.transpose() * v;
        Eigen::FullPivLU<Mat> lu(middle());
        if (!lu.isInvertible()) return out;
        out -= W * lu.solve(t);
        return out;
    }

    void update(const Vec& s, const Vec& yg) {
        const double sn = s.norm();
        if (sn < 1e-14) return;
        Vec Bs = apply(s);
        const double sBs = std::max(s.dot(Bs), 1e-16);
        double sy = s.dot(yg);
        Vec yt = yg;
        if (sy < 0.2 * sBs) {  // Powell damping keeps B positive definite
            const double theta = 0.8 * sBs / (sBs - sy);
            yt = theta * yg + (1.0 - theta) * Bs;
            sy = yt.dot(s);
        }
        if (sy <= 1e-12 * sn * yt.norm()) return;
        S.push_back(s);
        Y.push_back(yt);
        if ((int)S.size() > mem) {
            S.pop_front();
            Y.pop_front();
        }
        sigma = std::clamp(yt.squaredNorm() / sy, 1e-6, 1e8);
    }
};

struct KktSolver {
    const Workspace& w;
    SpMat K;
    Eigen::SimplicialLDLT<SpMat> ldlt;
    bool analyzed = false;

    explicit KktSolver(const Workspace& ws) : w(ws) {}

    // assemble lower triangle of [[H + D1, A^T], [A, -dc I]]; D1 = diag
    void assemble(const Vec& d1, const Vec& jvals, double dc, const Vec* hvals) {
        const int N = w.nh + w.m;
        std::vector<Trip> trips;
        trips.reserve(w.nh + w.m + w.jr.size() + w.hr.size());
        for (int i = 0; i < w.nh; ++i) trips.emplace_back(i, i, d1[i]);
        if (hvals)
            for (int k = 0; k < (int)w.hr.size(); ++k)
                trips.emplace_back(w.hr[k], w.hc[k], (*hvals)[k]);
        for (int k = 0; k < (int)w.jr.size(); ++k)
            trips.emplace_back(w.nh + w.jr[k], w.jc[k], jvals[k]);
        for (int r = 0; r < w.m; ++r) trips.emplace_back(w.nh + r, w.nh + r, -dc);
        K.resize(N, N);
        K.setFromTriplets(trips.begin(), trips.end());
        if (!analyzed) {
            ldlt.analyzePattern(K);
            analyzed = true;
        }
        ldlt.factorize(K);
    }

    // true if the factorization exists with inertia (nh, m, 0)
    bool inertia_ok() const {
        if (ldlt.info() != Eigen::Success) return false;
        const auto& D = ldlt.vectorD();
        int pos = 0, neg = 0;
        for (int i = 0; i < D.size(); ++i) {
            if (!std::isfinite(D[i]) || std::abs(D[i]) < 1e-300) return false;
            (D[i] > 0 ? pos : neg)++;
        }
        return pos == w.nh && neg == w.m;
    }
};

}  // namespace

NlpSolution solve_nlp(const NlpProblem& p, std::span<const double> start, const NlpOptions& opts,
                      const WarmStart* warm) {
    const auto t0 = std::chrono::steady_clock::now();
    Workspace w(p);
    const int nx = w.nx, mi = w.mi, me = w.me, nh = w.nh, m = w.m;

    NlpSolution sol;
    auto finish = [&](NlpStatus st, const Vec& xh, const Vec& y, const Vec& zl, const Vec& zu,
                      int iters, const KktResiduals& kkt) {
        sol.status = st;
        sol.iterations = iters;
        sol.kkt = kkt;
        sol.x.assign(xh.data(), xh.data() + nx);
        for (int i = 0; i < nx; ++i)  // sharp-clip relaxed fixed bounds
            sol.x[i] = std::clamp(sol.x[i], p.lower[i], p.upper[i]);
        sol.objective = p.objective ? p.objective({sol.x.data(), (size_t)nx}) : 0.0;
        sol.y_eq.assign(y.data(), y.data() + me);
        sol.y_ineq.assign(y.data() + me, y.data() + m);
        // report multipliers of the original (unscaled) problem
        for (int r = 0; r < me; ++r) sol.y_eq[r] *= w.s_row[r] / w.s_obj;
        for (int k = 0; k < mi; ++k) sol.y_ineq[k] *= w.s_row[me + k] / w.s_obj;
        sol.z_lower.assign(zl.data(), zl.data() + nx);
        sol.z_upper.assign(zu.data(), zu.data() + nx);
        for (int i = 0; i < nx; ++i) {
            sol.z_lower[i] /= w.s_obj;
            sol.z_upper[i] /= w.s_obj;
        }
        sol.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return sol;
    };

    // start point: project into the interior of the bounds
    Vec xh(nh);
    for (int i = 0; i < nx; ++i) xh[i] = i < (int)start.size() ? start[i] : 0.0;
    auto push_interior = [&](int i) {
        const double l = w.lo[i], u = w.up[i];
        if (w.has_lo[i] && w.has_up[i]) {
            const double pad = std::min({1e-2 * std::max(1.0, std::abs(l)),
                                         1e-2 * std::max(1.0, std::abs(u)), 0.499 * (u - l)});
            xh[i] = std::clamp(xh[i], l + pad, u - pad);
        } else if (w.has_lo[i]) {
            xh[i] = std::max(xh[i], l + 1e-2 * std::max(1.0, std::abs(l)));
        } else if (w.has_up[i]) {
            xh[i] = std::min(xh[i], u - 1e-2 * std::max(1.0, std::abs(u)));
        }
        if (!std::isfinite(xh[i])) xh[i] = 0.0;
    };
    for (int i = 0; i < nx; ++i) push_interior(i);
    if (mi) {
        p.eval_ineq(w.xpart(xh), {w.cin_buf.data(), (size_t)mi});
        for (int k = 0; k < mi; ++k) xh[nx + k] = w.cin_buf[k];
        for (int k = 0; k < mi; ++k) push_interior(nx + k);
    }

    // gradient-based scaling, fixed for the whole solve
    {
        Vec g(nh);
        w.eval_g(xh, g);
        double gmax = 0.0;
        for (int i = 0; i < nx; ++i) gmax = std::max(gmax, std::abs(g[i]));
        w.s_obj = gmax > 100.0 ? 100.0 / gmax : 1.0;
        Vec jv;
        w.eval_jac(xh, jv);
        Vec rmax = Vec::Zero(m);
        for (int k = 0; k < w.nnz_user; ++k)
            rmax[w.jr[k]] = std::max(rmax[w.jr[k]], std::abs(jv[k]));
        for (int r = 0; r < m; ++r) w.s_row[r] = rmax[r] > 100.0 ? 100.0 / rmax[r] : 1.0;
    }

    double mu = opts.mu_init;
    // the dual/complementarity exit thresholds sit below the feasibility
    // tolerance so the attained objective is reliably inside tol as well
    const double tol_dual = opts.tol / 10.0;
    const double mu_min = opts.tol / 110.0;
    double tau = std::max(0.99, 1.0 - mu);

    Vec zl = Vec::Zero(nh), zu = Vec::Zero(nh);
    for (int i = 0; i < nh; ++i) {
        if (w.has_lo[i]) zl[i] = std::clamp(mu / (xh[i] - w.lo[i]), 1e-8, 1e8);
        if (w.has_up[i]) zu[i] = std::clamp(mu / (w.up[i] - xh[i]), 1e-8, 1e8);
    }
    Vec y = Vec::Zero(m);
    if (warm) {
        for (int r = 0; r < me && r < (int)warm->y_eq.size(); ++r)
            y[r] = warm->y_eq[r] * w.s_obj / w.s_row[r];
        for (int k = 0; k < mi && k < (int)warm->y_ineq.size(); ++k)
            y[me + k] = warm->y_ineq[k] * w.s_obj / w.s_row[me + k];
    }

    Lbfgs bfgs;
    bfgs.nx = nh;
    bfgs.mem = std::max(0, opts.lbfgs_memory);
    KktSolver kkt(w);

    double f_cur = w.eval_f(xh);
    Vec c_cur, g_cur, jv_cur;
    w.eval_c(xh, c_cur);
    w.eval_g(xh, g_cur);
    w.eval_jac(xh, jv_cur);
    if (!std::isfinite(f_cur) || !c_cur.allFinite())
        return finish(NlpStatus::NumericalFailure, xh, y, zl, zu, 0, {});

    double delta_w_last = 0.0;
    int ls_failures = 0;
    int micro_steps = 0;
    double theta_best = std::numeric_limits<double>::infinity();
    int iters_since_theta_progress = 0;

    // filter state; thresholds follow the scaled violation at the start
    std::vector<std::pair<double, double>> filter;
    const double theta_init = std::max(1.0, c_cur.lpNorm<1>());
    const double theta_lo = 1e-4 * theta_init;
    const double theta_hi = 1e4 * theta_init;

    auto comp_err = [&](double mu_eval) {
        double comp = 0.0;
        for (int i = 0; i < nh; ++i) {
            if (w.has_lo[i])
                comp = std::max(comp, std::abs((xh[i] - w.lo[i]) * zl[i] - mu_eval));
            if (w.has_up[i])
                comp = std::max(comp, std::abs((w.up[i] - xh[i]) * zu[i] - mu_eval));
        }
        return comp;
    };

    auto barrier_phi = [&](double f, const Vec& x) {
        double phi = f;
        for (int i = 0; i < nh; ++i) {
            if (w.has_lo[i]) phi -= mu * std::log(x[i] - w.lo[i]);
            if (w.has_up[i]) phi -= mu * std::log(w.up[i] - x[i]);
        }
        return phi;
    };

    int iter = 0;
    double last_alpha_p = 0.0, last_alpha_d = 0.0;
    KktResiduals kkt_out;
    for (;; ++iter) {
        double stat = 0.0, mult = 0.0;
        {
            Vec aty(nh);
            w.at_y(jv_cur, y, aty);
            for (int i = 0; i < nh; ++i)
                stat = std::max(stat, std::abs(g_cur[i] + aty[i] - zl[i] + zu[i]));
            for (int i = 0; i < nh; ++i) {
                if (w.has_lo[i]) mult = std::max(mult, zl[i]);
                if (w.has_up[i]) mult = std::max(mult, zu[i]);
            }
            for (int r = 0; r < m; ++r) mult = std::max(mult, std::abs(y[r]));
        }
        const double sd = 1.0 + mult;
        const double feas_scaled = m ? c_cur.cwiseAbs().maxCoeff() : 0.0;
        const double feas_unscaled = w.unscaled_viol(xh);
        kkt_out = {stat / sd, feas_unscaled, comp_err(0.0) / sd};

        if (opts.log)
            opts.log({iter, f_cur / w.s_obj, feas_unscaled, kkt_out.stationarity, mu, last_alpha_p,
                      last_alpha_d});

        if (kkt_out.stationarity <= tol_dual && kkt_out.complementarity <= tol_dual &&
            feas_unscaled <= opts.tol && feas_scaled <= opts.tol)
            return finish(NlpStatus::LocallyOptimal, xh, y, zl, zu, iter, kkt_out);
        if (iter >= opts.max_iter)
            return finish(NlpStatus::MaxIterations, xh, y, zl, zu, iter, kkt_out);
        if (xh.cwiseAbs().maxCoeff() > 1e12)
            return finish(NlpStatus::NumericalFailure, xh, y, zl, zu, iter, kkt_out);

        // monotone barrier reduction once the current barrier problem is
        // solved to within a factor of mu
        while (mu > mu_min &&
               std::max({stat / sd, comp_err(mu) / sd, feas_scaled}) <= 10.0 * mu) {
            mu = std::max(mu_min, std::min(0.2 * mu, std::pow(mu, 1.5)));
            tau = std::max(0.99, 1.0 - mu);
            filter.clear();  // new barrier problem, fresh filter
            iters_since_theta_progress = 0;
        }

        // KKT assembly with inertia correction
        Vec d1(nh), hvals;
        if (w.exact_hessian) w.eval_hess(xh, y, hvals);
        double delta_w = 0.0;
        const double delta_c = std::max(1e-11, 1e-8 * std::sqrt(std::max(mu, 1e-10)));
        bool factored = false;
        for (int attempt = 0; attempt < 12; ++attempt) {
            for (int i = 0; i < nh; ++i) {
                double sig = 0.0;
                if (w.has_lo[i]) sig += zl[i] / (xh[i] - w.lo[i]);
                if (w.has_up[i]) sig += zu[i] / (w.up[i] - xh[i]);
                d1[i] = (w.exact_hessian ? 0.0 : bfgs.sigma) + sig + delta_w;
            }
            kkt.assemble(d1, jv_cur, delta_c, w.exact_hessian ? &hvals : nullptr);
            if (kkt.inertia_ok()) {
                factored = true;
                if (delta_w > 0.0) delta_w_last = delta_w;
                break;
            }
            delta_w = delta_w == 0.0 ? std::max({1e-20, delta_w_last / 3.0, 1e-4 * bfgs.sigma})
                                     : delta_w * 8.0;
            if (delta_w > 1e40) break;
        }
        if (!factored)
            return finish(NlpStatus::NumericalFailure, xh, y, zl, zu, iter, kkt_out);

        // right-hand side
        Vec rhs(nh + m);
        for (int i = 0; i < nh; ++i) {
            double v = -g_cur[i];
            if (w.has_lo[i]) v += mu / (xh[i] - w.lo[i]);
            if (w.has_up[i]) v -= mu / (w.up[i] - xh[i]);
            rhs[i] = v;
        }
        {
            Vec aty(nh);
            w.at_y(jv_cur, y, aty);
            rhs.head(nh) -= aty;
        }
        rhs.tail(m) = -c_cur;

        // solve K d = rhs with the low-rank BFGS part via Woodbury
        Vec d = kkt.ldlt.solve(rhs);
        const int q = w.exact_hessian ? 0 : bfgs.pairs();
        if (q > 0) {
            Mat What = Mat::Zero(nh + m, 2 * q);
            What.topRows(nh) = bfgs.wide();
            Mat P = kkt.ldlt.solve(What);
            Mat cap = What.transpose() * P - bfgs.middle();
            Eigen::FullPivLU<Mat> lu(cap);
            if (lu.isInvertible()) {
                d -= P * lu.solve(What.transpose() * d);
            } else {
                bfgs.reset();
            }
        }
        if (!d.allFinite())
            return finish(NlpStatus::NumericalFailure, xh, y, zl, zu, iter, kkt_out);

        Vec dx = d.head(nh), dy = d.tail(m);

        // bound-multiplier directions
        Vec dzl = Vec::Zero(nh), dzu = Vec::Zero(nh);
        for (int i = 0; i < nh; ++i) {
            if (w.has_lo[i])
                dzl[i] = mu / (xh[i] - w.lo[i]) - zl[i] - zl[i] * dx[i] / (xh[i] - w.lo[i]);
            if (w.has_up[i])
                dzu[i] = mu / (w.up[i] - xh[i]) - zu[i] + zu[i] * dx[i] / (w.up[i] - xh[i]);
        }

        // fraction-to-the-boundary step limits
        double alpha_p = 1.0, alpha_d = 1.0;
        for (int i = 0; i < nh; ++i) {
            if (w.has_lo[i] && dx[i] < 0.0)
                alpha_p = std::min(alpha_p, -tau * (xh[i] - w.lo[i]) / dx[i]);
            if (w.has_up[i] && dx[i] > 0.0)
                alpha_p = std::min(alpha_p, tau * (w.up[i] - xh[i]) / dx[i]);
            if (w.has_lo[i] && dzl[i] < 0.0) alpha_d = std::min(alpha_d, -tau * zl[i] / dzl[i]);
            if (w.has_up[i] && dzu[i] < 0.0) alpha_d = std::min(alpha_d, -tau * zu[i] / dzu[i]);
        }

        // filter line search on (constraint violation, barrier objective)
        const double theta0 = c_cur.lpNorm<1>();
        const double phi0 = barrier_phi(f_cur, xh);
        double dphi = 0.0;
        for (int i = 0; i < nh; ++i) {
            double gphi = g_cur[i];
            if (w.has_lo[i]) gphi -= mu / (xh[i] - w.lo[i]);
            if (w.has_up[i]) gphi += mu / (w.up[i] - xh[i]);
            dphi += gphi * dx[i];
        }

        double alpha = alpha_p;
        bool accepted = false, f_type_accept = false;
        Vec xt(nh), ct;
        double ft = 0.0;
        for (int bt = 0; bt < 40; ++bt) {
            xt = xh + alpha * dx;
            ft = w.eval_f(xt);
            w.eval_c(xt, ct);
            if (std::isfinite(ft) && ct.allFinite()) {
                const double theta_t = ct.lpNorm<1>();
                const double phi_t = barrier_phi(ft, xt);
                bool dominated = theta_t > theta_hi;
                for (const auto& [tf, pf] : filter)
                    if (theta_t >= tf && phi_t >= pf) {
                        dominated = true;
                        break;
                    }
                if (!dominated) {
                    const bool f_type = theta0 <= theta_lo && dphi < 0.0 &&
                                        alpha * std::pow(-dphi, 2.3) > std::pow(theta0, 1.1);
                    if (f_type) {
                        if (phi_t <= phi0 + 1e-8 * alpha * dphi) {
                            accepted = true;
                            f_type_accept = true;
                            break;
                        }
                    } else if (theta_t <= (1.0 - 1e-5) * theta0 || phi_t <= phi0 - 1e-5 * theta0) {
                        accepted = true;
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }

        if (!accepted) {
            bfgs.reset();
            delta_w_last = std::max(delta_w_last, 1e-4);
            if (++ls_failures >= 8) {
                if (feas_unscaled > 100.0 * opts.tol)
                    return finish(NlpStatus::InfeasibleDetected, xh, y, zl, zu, iter, kkt_out);
                return finish(NlpStatus::NumericalFailure, xh, y, zl, zu, iter, kkt_out);
            }
            continue;
        }
        if (!f_type_accept)  // block this corner of the (theta, phi) plane
            filter.push_back({std::max((1.0 - 1e-5) * theta0, 0.0), phi0 - 1e-5 * theta0});
        if (alpha < 1e-8 * alpha_p || alpha < 1e-10) {
            if (++micro_steps >= 3) {
                bfgs.reset();
                micro_steps = 0;
            }
        } else {
            micro_steps = 0;
        }
        ls_failures = 0;
        last_alpha_p = alpha;
        last_alpha_d = alpha_d;

        // save old gradient data for the quasi-Newton pair
        Vec g_old = g_cur, jv_old = jv_cur;
        Vec y_new = y + alpha * dy;
        const double f_before = f_cur;

        xh = xt;
        f_cur = ft;
        c_cur = ct;
        y = y_new;
        zl += alpha_d * dzl;
        zu += alpha_d * dzu;
        for (int i = 0; i < nh; ++i) {  // keep multipliers near the central path
            if (w.has_lo[i]) {
                const double ref = mu / (xh[i] - w.lo[i]);
                zl[i] = std::clamp(zl[i], ref / kKappaSigma, ref * kKappaSigma);
            }
            if (w.has_up[i]) {
                const double ref = mu / (w.up[i] - xh[i]);
                zu[i] = std::clamp(zu[i], ref / kKappaSigma, ref * kKappaSigma);
            }
        }

        w.eval_g(xh, g_cur);
        w.eval_jac(xh, jv_cur);

        // damped BFGS pair: change of the Lagrangian gradient at fixed y
        if (!w.exact_hessian) {
            Vec aty_new(nh), aty_old(nh);
            w.at_y(jv_cur, y, aty_new);
            w.at_y(jv_old, y, aty_old);
            Vec step = alpha * dx;
            Vec dgrad = (g_cur + aty_new) - (g_old + aty_old);
            bfgs.update(step, dgrad);
        }

        // infeasibility heuristic: no primal-violation progress, no objective
        // movement, and the barrier already at its floor for a long stretch
        if (feas_unscaled < 0.9 * theta_best || std::abs(ft - f_before) > 1e-8 * (1.0 + std::abs(ft)) ||
            mu > mu_min) {
            theta_best = std::min(theta_best, feas_unscaled);
            iters_since_theta_progress = 0;
        } else if (++iters_since_theta_progress > 300 && feas_unscaled > 100.0 * opts.tol) {
            return finish(NlpStatus::InfeasibleDetected, xh, y, zl, zu, iter, kkt_out);
        }
    }
}

DerivCheckResult check_derivatives(const NlpProblem& p, std::span<const double> point) {
    const int nx = p.n_vars, me = p.n_eq, mi = p.n_ineq;
    std::vector<double> x(point.begin(), point.end());

    DerivCheckResult out;
    // a central difference of a quantity of magnitude M carries roundoff of
    // about eps*M/h; discrepancies inside that floor are indistinguishable
    // from an exact derivative and must not be reported
    auto consider = [&](double analytic, double fd, double magnitude, double h,
                        const std::string& where) {
        const double noise = 8.0 * 2.2e-16 * magnitude / h;
        const double denom = std::max({1.0, std::abs(analytic), std::abs(fd)});
        const double err = std::max(0.0, std::abs(analytic - fd) - noise) / denom;
        if (err > out.max_rel_error) {
            out.max_rel_error = err;
            out.where = where;
        }
    };

    // analytic values, duplicates in the pattern accumulated
    std::vector<double> grad(nx, 0.0);
    if (p.gradient) p.gradient({x.data(), x.size()}, grad);
    std::vector<double> jeq(p.eq_pattern.size(), 0.0), jin(p.ineq_pattern.size(), 0.0);
    if (me) p.eval_eq_jac({x.data(), x.size()}, jeq);
    if (mi) p.eval_ineq_jac({x.data(), x.size()}, jin);
    std::vector<std::vector<std::pair<int, double>>> eq_cols(nx), in_cols(nx);
    {
        std::vector<std::vector<double>> eq_acc(nx), in_acc(nx);
        std::vector<std::vector<int>> eq_rows(nx), in_rows(nx);
        for (size_t k = 0; k < p.eq_pattern.size(); ++k) {
            auto [r, c] = p.eq_pattern[k];
            auto& rows = eq_rows[c];
            auto it = std::find(rows.begin(), rows.end(), r);
            if (it == rows.end()) {
                rows.push_back(r);
                eq_acc[c].push_back(jeq[k]);
            } else {
                eq_acc[c][it - rows.begin()] += jeq[k];
            }
        }
        for (size_t k = 0; k < p.ineq_pattern.size(); ++k) {
            auto [r, c] = p.ineq_pattern[k];
            auto& rows = in_rows[c];
            auto it = std::find(rows.begin(), rows.end(), r);
            if (it == rows.end()) {
                rows.push_back(r);
                in_acc[c].push_back(jin[k]);
            } else {
                in_acc[c][it - rows.begin()] += jin[k];
            }
        }
        for (int c = 0; c < nx; ++c) {
            for (size_t i = 0; i < eq_rows[c].size(); ++i)
                eq_cols[c].push_back({eq_rows[c][i], eq_acc[c][i]});
            for (size_t i = 0; i < in_rows[c].size(); ++i)
                in_cols[c].push_back({in_rows[c][i], in_acc[c][i]});
        }
    }

    std::vector<double> cp(me), cm(me), ip(mi), im_(mi);
    for (int j = 0; j < nx; ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(x[j]));
        const double save = x[j];
        x[j] = save + h;
        const double fp = p.objective ? p.objective({x.data(), x.size()}) : 0.0;
        if (me) p.eval_eq({x.data(), x.size()}, cp);
        if (mi) p.eval_ineq({x.data(), x.size()}, ip);
        x[j] = save - h;
        const double fm = p.objective ? p.objective({x.data(), x.size()}) : 0.0;
        if (me) p.eval_eq({x.data(), x.size()}, cm);
        if (mi) p.eval_ineq({x.data(), x.size()}, im_);
        x[j] = save;

        if (p.gradient)
            consider(grad[j], (fp - fm) / (2.0 * h), std::max(std::abs(fp), std::abs(fm)), h,
                     "grad[" + std::to_string(j) + "]");
        for (auto [r, a] : eq_cols[j])
            consider(a, (cp[r] - cm[r]) / (2.0 * h), std::max(std::abs(cp[r]), std::abs(cm[r])), h,
                     "eq[" + std::to_string(r) + "]/x[" + std::to_string(j) + "]");
        for (auto [r, a] : in_cols[j])
            consider(a, (ip[r] - im_[r]) / (2.0 * h), std::max(std::abs(ip[r]), std::abs(im_[r])),
                     h, "ineq[" + std::to_string(r) + "]/x[" + std::to_string(j) + "]");
    }
    return out;
}

}  // namespace vvo
