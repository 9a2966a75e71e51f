#pragma once

#include <sstream>
#include <string>

namespace vvo::test {

// Chain of transmission blocks in MATPOWER text form. Each block hangs a
// 138 kV subgrid with one generator and four loads off a 345 kV hub through
// an OLTC transformer; hubs are chained by HV lines and every third block
// carries a 10 MVAr capacitor bank. blocks = 480 gives a 2880-bus system.
inline std::string synthetic_grid_case(int blocks) {
    std::ostringstream bus, gen, gencost, branch;
    auto id = [&](int block, int local) { return block * 6 + local + 1; };

    for (int k = 0; k < blocks; ++k) {
        const int hub = id(k, 0), gbus = id(k, 1);
        bus << "\t" << hub << "\t1\t0.0\t0.0\t0.0\t0.0\t1\t1.0\t0.0\t345.0\t1\t1.06\t0.94;\n";
        bus << "\t" << gbus << "\t" << (k == 0 ? 3 : 2)
            << "\t10.0\t2.0\t0.0\t0.0\t1\t1.0\t0.0\t138.0\t1\t1.06\t0.94;\n";
        for (int j = 2; j < 6; ++j) {
            const double pd = 35.0 + 10.0 * ((k + j) % 3);
            const double qd = 0.25 * pd;
            const double bs = (j == 4 && k % 3 == 0) ? 10.0 : 0.0;
            bus << "\t" << id(k, j) << "\t1\t" << pd << "\t" << qd << "\t0.0\t" << bs
                << "\t1\t1.0\t0.0\t138.0\t1\t1.06\t0.94;\n";
        }

        const double c2 = 0.004 + 0.002 * (k % 5);
        const double c1 = 20.0 + 3.0 * (k % 7);
        gen << "\t" << gbus << "\t200.0\t0.0\t150.0\t-150.0\t1.0\t100.0\t1\t400.0\t0.0;\n";
        gencost << "\t2\t0.0\t0.0\t3\t" << c2 << "\t" << c1 << "\t0.0;\n";

        // generator feeder and load ring
        branch << "\t" << gbus << "\t" << id(k, 2)
               << "\t0.008\t0.045\t0.012\t300.0\t300.0\t300.0\t0.0\t0.0\t1\t-30.0\t30.0;\n";
        branch << "\t" << id(k, 2) << "\t" << id(k, 3)
               << "\t0.014\t0.062\t0.016\t150.0\t150.0\t150.0\t0.0\t0.0\t1\t-30.0\t30.0;\n";
        branch << "\t" << id(k, 3) << "\t" << id(k, 4)
               << "\t0.016\t0.070\t0.018\t150.0\t150.0\t150.0\t0.0\t0.0\t1\t-30.0\t30.0;\n";
        branch << "\t" << id(k, 4) << "\t" << id(k, 5)
               << "\t0.014\t0.060\t0.016\t150.0\t150.0\t150.0\t0.0\t0.0\t1\t-30.0\t30.0;\n";
        branch << "\t" << id(k, 5) << "\t" << id(k, 2)
               << "\t0.012\t0.055\t0.014\t150.0\t150.0\t150.0\t0.0\t0.0\t1\t-30.0\t30.0;\n";
        // OLTC from the hub into the load center
        branch << "\t" << hub << "\t" << id(k, 2)
               << "\t0.002\t0.060\t0.0\t250.0\t250.0\t250.0\t1.0\t0.0\t1\t-30.0\t30.0;\n";
        if (k + 1 < blocks)
            branch << "\t" << hub << "\t" << id(k + 1, 0)
                   << "\t0.0015\t0.018\t0.12\t500.0\t500.0\t500.0\t0.0\t0.0\t1\t-30.0\t30.0;\n";
    }

    std::ostringstream out;
    out << "function mpc = synth" << blocks << "\n";
    out << "mpc.version = '2';\nmpc.baseMVA = 100.0;\n";
    out << "mpc.bus = [\n" << bus.str() << "];\n";
    out << "mpc.gen = [\n" << gen.str() << "];\n";
    out << "mpc.gencost = [\n" << gencost.str() << "];\n";
    out << "mpc.branch = [\n" << branch.str() << "];\n";
    return out.str();
}

}  // namespace vvo::test
