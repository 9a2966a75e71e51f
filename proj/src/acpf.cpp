#include "vvo/acpf.hpp"

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>
#include <cmath>

namespace vvo {

BranchAdmittance branch_admittance(const Branch& br, double tap) {
    const double t2 = tap * tap;
    return {br.yff / t2, br.yft / tap, br.ytf / tap, br.ytt};
}

Complex shunt_admittance(const ShuntDevice& sh, double cb) {
    return {sh.gs, sh.bs0 + cb};
}

BranchFlows branch_flows(const Branch& br, double tap, Complex Vi, Complex Vj) {
    const auto Y = branch_admittance(br, tap);
    const Complex Sf = Vi * std::conj(Y.Yff * Vi + Y.Yft * Vj);
    const Complex St = Vj * std::conj(Y.Ytf * Vi + Y.Ytt * Vj);
    return {Sf.real(), Sf.imag(), St.real(), St.imag()};
}

BranchFlowDerivs branch_flow_derivs(const Branch& br, double tap, double vm_i, double va_i,
                                    double vm_j, double va_j) {
    const auto Y = branch_admittance(br, tap);
    const double gff = Y.Yff.real(), bff = Y.Yff.imag();
    const double gft = Y.Yft.real(), bft = Y.Yft.imag();
    const double gtf = Y.Ytf.real(), btf = Y.Ytf.imag();
    const double gtt = Y.Ytt.real(), btt = Y.Ytt.imag();

    const double th = va_i - va_j;
    const double ct = std::cos(th), st = std::sin(th);
    const double vij = vm_i * vm_j;

    // trigonometric couplings shared by flows and partials
    const double Af = gft * ct + bft * st;   // pf coupling
    const double Bf = gft * st - bft * ct;   // qf coupling
    const double At = gtf * ct - btf * st;   // pt coupling
    const double Bt = gtf * st + btf * ct;   // qt coupling

    BranchFlowDerivs d;
    d.flow.pf = gff * vm_i * vm_i + vij * Af;
    d.flow.qf = -bff * vm_i * vm_i + vij * Bf;
    d.flow.pt = gtt * vm_j * vm_j + vij * At;
    d.flow.qt = -btt * vm_j * vm_j - vij * Bt;

    // dA/dth = -Bf, dBf/dth = Af, dAt/dth = -Bt, dBt/dth = At
    const double dpf_th = -vij * Bf;
    const double dqf_th = vij * Af;
    const double dpt_th = -vij * Bt;
    const double dqt_th = -vij * At;

    // order: va_i, va_j, vm_i, vm_j, tap
    d.dpf[0] = dpf_th;
    d.dpf[1] = -dpf_th;
    d.dpf[2] = 2.0 * gff * vm_i + vm_j * Af;
    d.dpf[3] = vm_i * Af;
    d.dpf[4] = -(2.0 * gff * vm_i * vm_i + vij * Af) / tap;

    d.dqf[0] = dqf_th;
    d.dqf[1] = -dqf_th;
    d.dqf[2] = -2.0 * bff * vm_i + vm_j * Bf;
    d.dqf[3] = vm_i * Bf;
    d.dqf[4] = (2.0 * bff * vm_i * vm_i - vij * Bf) / tap;

    d.dpt[0] = dpt_th;
    d.dpt[1] = -dpt_th;
    d.dpt[2] = vm_j * At;
    d.dpt[3] = 2.0 * gtt * vm_j + vm_i * At;
    d.dpt[4] = -vij * At / tap;

    d.dqt[0] = dqt_th;
    d.dqt[1] = -dqt_th;
    d.dqt[2] = -vm_j * Bt;
    d.dqt[3] = -2.0 * btt * vm_j - vm_i * Bt;
    d.dqt[4] = vij * Bt / tap;

    return d;
}

BranchFlowHessians branch_flow_hessians(const Branch& br, double tap, double vm_i, double va_i,
                                        double vm_j, double va_j) {
    const auto Y = branch_admittance(br, tap);
    const double gff = Y.Yff.real(), bff = Y.Yff.imag();
    const double gtt = Y.Ytt.real(), btt = Y.Ytt.imag();
    const double th = va_i - va_j;
    const double ct = std::cos(th), st = std::sin(th);
    const double vij = vm_i * vm_j;

    const double Af = Y.Yft.real() * ct + Y.Yft.imag() * st;
    const double Bf = Y.Yft.real() * st - Y.Yft.imag() * ct;
    const double At = Y.Ytf.real() * ct - Y.Ytf.imag() * st;
    const double Bt = Y.Ytf.real() * st + Y.Ytf.imag() * ct;

    BranchFlowHessians h;
    // pf = gff vi^2 + vij Af,  dAf/dth = -Bf
    h.pf = {-vij * Af, -vm_j * Bf, -vm_i * Bf,
            2.0 * gff, Af,         0.0,
            vij * Bf / tap, -(4.0 * gff * vm_i + vm_j * Af) / tap, -vm_i * Af / tap,
            (6.0 * gff * vm_i * vm_i + 2.0 * vij * Af) / tap / tap};
    // qf = -bff vi^2 + vij Bf,  dBf/dth = Af
    h.qf = {-vij * Bf, vm_j * Af, vm_i * Af,
            -2.0 * bff, Bf,       0.0,
            -vij * Af / tap, (4.0 * bff * vm_i - vm_j * Bf) / tap, -vm_i * Bf / tap,
            (-6.0 * bff * vm_i * vm_i + 2.0 * vij * Bf) / tap / tap};
    // pt = gtt vj^2 + vij At,  dAt/dth = -Bt; gtt does not see the tap
    h.pt = {-vij * At, -vm_j * Bt, -vm_i * Bt,
            0.0,  At, 2.0 * gtt,
            vij * Bt / tap, -vm_j * At / tap, -vm_i * At / tap, 2.0 * vij * At / tap / tap};
    // qt = -btt vj^2 - vij Bt,  dBt/dth = At
    h.qt = {vij * Bt, -vm_j * At, -vm_i * At,
            0.0, -Bt, -2.0 * btt,
            vij * At / tap, vm_j * Bt / tap, vm_i * Bt / tap, -2.0 * vij * Bt / tap / tap};
    return h;
}

std::vector<Complex> kcl_residual(const Network& net, const OperatingState& st) {
    const size_t nb = net.buses.size();
    std::vector<Complex> res(nb);
    for (size_t i = 0; i < nb; ++i) res[i] = {-net.buses[i].pd, -net.buses[i].qd};
    for (size_t g = 0; g < net.generators.size(); ++g)
        if (net.generators[g].in_service)
            res[net.generators[g].bus] += Complex(st.pg[g], st.qg[g]);
    for (size_t s = 0; s < net.shunts.size(); ++s) {
        const auto& sh = net.shunts[s];
        const double vm = st.vm[sh.bus];
        res[sh.bus] -= std::conj(shunt_admittance(sh, st.cb[s])) * (vm * vm);
    }
    for (size_t e = 0; e < net.branches.size(); ++e) {
        const auto& br = net.branches[e];
        const Complex Vi = std::polar(st.vm[br.from_bus], st.va[br.from_bus]);
        const Complex Vj = std::polar(st.vm[br.to_bus], st.va[br.to_bus]);
        const auto f = branch_flows(br, st.tap[e], Vi, Vj);
        res[br.from_bus] -= Complex(f.pf, f.qf);
        res[br.to_bus] -= Complex(f.pt, f.qt);
    }
    return res;
}

void refresh_flows(const Network& net, OperatingState& st) {
    for (size_t e = 0; e < net.branches.size(); ++e) {
        const auto& br = net.branches[e];
        const Complex Vi = std::polar(st.vm[br.from_bus], st.va[br.from_bus]);
        const Complex Vj = std::polar(st.vm[br.to_bus], st.va[br.to_bus]);
        const auto f = branch_flows(br, st.tap[e], Vi, Vj);
        st.pf[e] = f.pf;
        st.qf[e] = f.qf;
        st.pt[e] = f.pt;
        st.qt[e] = f.qt;
    }
}

std::string residuals_csv(const Network& net, const OperatingState& st) {
    auto res = kcl_residual(net, st);
    std::string out = "bus,re,im\n";
    char line[96];
    for (size_t i = 0; i < res.size(); ++i) {
        std::snprintf(line, sizeof line, "%zu,%.12e,%.12e\n", i, res[i].real(), res[i].imag());
        out += line;
    }
    return out;
}

PfResult solve_power_flow(const Network& net, const std::vector<double>& tap,
                          const std::vector<double>& cb, const std::vector<double>& pg_set,
                          const std::vector<double>& vm_set, const PfOptions& opts,
                          const OperatingState* initial) {
    const int nb = (int)net.buses.size();
    PfResult out;

    int slack = net.slack_bus();
    if (slack < 0) {
        out.failure = {"no slack bus", 0};
        return out;
    }

    std::vector<char> is_pv(nb, 0);
    for (const auto& g : net.generators)
        if (g.in_service) is_pv[g.bus] = 1;
    is_pv[slack] = 0;

    // net scheduled injection per bus (loads, fixed pg)
    std::vector<double> p_sched(nb, 0.0), q_sched(nb, 0.0);
    for (int i = 0; i < nb; ++i) {
        p_sched[i] = -net.buses[i].pd;
        q_sched[i] = -net.buses[i].qd;
    }
    for (size_t g = 0; g < net.generators.size(); ++g)
        if (net.generators[g].in_service && net.generators[g].bus != slack)
            p_sched[net.generators[g].bus] += pg_set[g];

    // unknown layout: va for all buses but slack, then vm for PQ buses
    std::vector<int> va_idx(nb, -1), vm_idx(nb, -1);
    int nvar = 0;
    for (int i = 0; i < nb; ++i)
        if (i != slack) va_idx[i] = nvar++;
    for (int i = 0; i < nb; ++i)
        if (i != slack && !is_pv[i]) vm_idx[i] = nvar++;

    std::vector<double> vm(nb), va(nb, 0.0);
    for (int i = 0; i < nb; ++i) vm[i] = (i == slack || is_pv[i]) ? vm_set[i] : 1.0;
    if (initial && !opts.flat_start) {
        va = initial->va;
        for (int i = 0; i < nb; ++i)
            if (i != slack && !is_pv[i]) vm[i] = initial->vm[i];
    }

    auto mismatch = [&](std::vector<double>& fp, std::vector<double>& fq) {
        fp.assign(nb, 0.0);
        fq.assign(nb, 0.0);
        for (int i = 0; i < nb; ++i) {
            fp[i] = p_sched[i];
            fq[i] = q_sched[i];
        }
        for (size_t s = 0; s < net.shunts.size(); ++s) {
            const auto& sh = net.shunts[s];
            const Complex y = shunt_admittance(sh, cb[s]);
            fp[sh.bus] -= y.real() * vm[sh.bus] * vm[sh.bus];
            fq[sh.bus] += y.imag() * vm[sh.bus] * vm[sh.bus];
        }
        for (size_t e = 0; e < net.branches.size(); ++e) {
            const auto& br = net.branches[e];
            const auto f = branch_flows(br, tap[e], std::polar(vm[br.from_bus], va[br.from_bus]),
                                        std::polar(vm[br.to_bus], va[br.to_bus]));
            fp[br.from_bus] -= f.pf;
            fq[br.from_bus] -= f.qf;
            fp[br.to_bus] -= f.pt;
            fq[br.to_bus] -= f.qt;
        }
    };

    std::vector<double> fp, fq;
    int iter = 0;
    for (;; ++iter) {
        mismatch(fp, fq);
        double err = 0.0;
        for (int i = 0; i < nb; ++i) {
            if (i != slack) err = std::max(err, std::abs(fp[i]));
            if (i != slack && !is_pv[i]) err = std::max(err, std::abs(fq[i]));
        }
        if (!std::isfinite(err) || err > 1e8) {
            out.failure = {"diverged at iteration " + std::to_string(iter), iter};
            out.iterations = iter;
            return out;
        }
        if (err <= opts.tol) break;
        if (iter >= opts.max_iter) {
            out.failure = {"did not converge within " + std::to_string(opts.max_iter) +
                               " iterations (mismatch " + std::to_string(err) + ")",
                           iter};
            out.iterations = iter;
            return out;
        }

        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(net.branches.size() * 16 + nb * 4);
        auto add = [&](int r, int c, double v) {
            if (r >= 0 && c >= 0) trips.emplace_back(r, c, v);
        };
        for (size_t s = 0; s < net.shunts.size(); ++s) {
            const auto& sh = net.shunts[s];
            const int i = sh.bus;
            const Complex y = shunt_admittance(sh, cb[s]);
            add(va_idx[i], vm_idx[i], -2.0 * y.real() * vm[i]);      // dP/dvm
            add(vm_idx[i], vm_idx[i], 2.0 * y.imag() * vm[i]);       // dQ/dvm
        }
        for (size_t e = 0; e < net.branches.size(); ++e) {
            const auto& br = net.branches[e];
            const int i = br.from_bus, j = br.to_bus;
            const auto d = branch_flow_derivs(br, tap[e], vm[i], va[i], vm[j], va[j]);
            // row: P mismatch at i (fp_i has -pf), columns va_i, va_j, vm_i, vm_j
            add(va_idx[i], va_idx[i], -d.dpf[0]);
            add(va_idx[i], va_idx[j], -d.dpf[1]);
            add(va_idx[i], vm_idx[i], -d.dpf[2]);
            add(va_idx[i], vm_idx[j], -d.dpf[3]);
            add(vm_idx[i], va_idx[i], -d.dqf[0]);
            add(vm_idx[i], va_idx[j], -d.dqf[1]);
            add(vm_idx[i], vm_idx[i], -d.dqf[2]);
            add(vm_idx[i], vm_idx[j], -d.dqf[3]);
            add(va_idx[j], va_idx[i], -d.dpt[0]);
            add(va_idx[j], va_idx[j], -d.dpt[1]);
            add(va_idx[j], vm_idx[i], -d.dpt[2]);
            add(va_idx[j], vm_idx[j], -d.dpt[3]);
            add(vm_idx[j], va_idx[i], -d.dqt[0]);
            add(vm_idx[j], va_idx[j], -d.dqt[1]);
            add(vm_idx[j], vm_idx[i], -d.dqt[2]);
            add(vm_idx[j], vm_idx[j], -d.dqt[3]);
        }

        Eigen::SparseMatrix<double> J(nvar, nvar);
        J.setFromTriplets(trips.begin(), trips.end());
        Eigen::VectorXd rhs(nvar);
        for (int i = 0; i < nb; ++i) {
            if (va_idx[i] >= 0) rhs[va_idx[i]] = fp[i];
            if (vm_idx[i] >= 0) rhs[vm_idx[i]] = fq[i];
        }

        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.analyzePattern(J);
        lu.factorize(J);
        if (lu.info() != Eigen::Success) {
            out.failure = {"singular Jacobian at iteration " + std::to_string(iter), iter};
            out.iterations = iter;
            return out;
        }
        // J holds d(mismatch)/dx with mismatch = sched - flows; Newton step
        // solves J dx = -mismatch.
        Eigen::VectorXd dx = lu.solve(-rhs);
        for (int i = 0; i < nb; ++i) {
            if (va_idx[i] >= 0) va[i] += dx[va_idx[i]];
            if (vm_idx[i] >= 0) vm[i] += dx[vm_idx[i]];
        }
    }

    OperatingState st = OperatingState::sized_for(net);
    st.vm = vm;
    st.va = va;
    st.tap = tap;
    st.cb = cb;
    for (size_t g = 0; g < net.generators.size(); ++g)
        st.pg[g] = (net.generators[g].in_service && net.generators[g].bus != slack) ? pg_set[g] : 0.0;
    // recover qg at PV/slack buses and pg at the slack from the residual
    std::fill(st.qg.begin(), st.qg.end(), 0.0);
    auto res = kcl_residual(net, st);
    std::vector<int> gens_at(nb, 0);
    for (const auto& g : net.generators)
        if (g.in_service) ++gens_at[g.bus];
    for (size_t g = 0; g < net.generators.size(); ++g) {
        const auto& gen = net.generators[g];
        if (!gen.in_service) continue;
        if (gen.bus == slack) st.pg[g] = -res[gen.bus].real() / gens_at[gen.bus];
        if (gen.bus == slack || is_pv[gen.bus]) st.qg[g] = -res[gen.bus].imag() / gens_at[gen.bus];
    }
    refresh_flows(net, st);
    out.state = std::move(st);
    out.iterations = iter;
    return out;
}

}  // namespace vvo
