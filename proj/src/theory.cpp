#include "softq/theory.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace softq {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Flattens the layer-h block of an occupancy table into a distribution
/// vector (lexicographic (s, a) order).
std::vector<double> layer_distribution(const OccupancyTable& occ, int h) {
    std::vector<double> out;
    for (const auto& row : occ.pair[h])
        for (double p : row) out.push_back(p);
    return out;
}

double traj_f_sum(const PairTable& f, const Trajectory& tau) {
    double s = 0.0;
    for (int h = 0; h < tau.length(); ++h) s += f.at(h, tau.states[h], tau.actions[h]);
    return s;
}

double bound_chi_layers(const LayeredMdp& mdp, const Policy& pi, const Policy& mu) {
    OccupancyTable dpi = occupancy(mdp, pi);
    OccupancyTable dmu = occupancy(mdp, mu);
    double total = 1.0;
    for (int h = 0; h < mdp.horizon; ++h) {
        const double c = chi_square(layer_distribution(dpi, h), layer_distribution(dmu, h));
        if (c == kInf) return kInf;
        total += c;
    }
    return total;
}

}  // namespace

double chi_square(const std::vector<double>& p, const std::vector<double>& q,
                  int* violating_atom) {
    if (p.size() != q.size()) throw InvalidArgument("chi_square: distribution size mismatch");
    double sum = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        if (!(q[i] > 0.0)) {
            if (violating_atom) *violating_atom = (int)i;
            return kInf;
        }
        sum += p[i] * p[i] / q[i];
    }
    return sum - 1.0;
}

double c_sa(const LayeredMdp& mdp, const Policy& pi, const Policy& mu) {
    OccupancyTable dpi = occupancy(mdp, pi);
    OccupancyTable dmu = occupancy(mdp, mu);
    double worst = 0.0;
    for (int h = 0; h < mdp.horizon; ++h)
        for (int s = 0; s < mdp.layer_sizes[h]; ++s)
            for (int a = 0; a < mdp.actions_at(h, s); ++a) {
                const double num = dpi.at(h, s, a);
                if (!(num > 0.0)) continue;
                const double den = dmu.at(h, s, a);
                if (!(den > 0.0)) return kInf;
                worst = std::max(worst, num / den);
            }
    return worst;
}

double concentrability_chi(const LayeredMdp& mdp, const Policy& mu,
                           const std::vector<Policy>& policy_set) {
    if (policy_set.empty()) throw InvalidArgument("concentrability_chi: empty policy set");
    OccupancyTable dmu = occupancy(mdp, mu);
    double worst = 0.0;
    for (const auto& pi : policy_set) {
        OccupancyTable dpi = occupancy(mdp, pi);
        for (int h = 0; h < mdp.horizon; ++h) {
            const double c = chi_square(layer_distribution(dpi, h), layer_distribution(dmu, h));
            if (c == kInf) return kInf;
            worst = std::max(worst, c);
        }
    }
    return 1.0 + worst;
}

CotmCertificate cotm_ratio(const LayeredMdp& mdp, const Policy& pi, const Policy& mu,
                           const PairTable& f) {
    check_pair_shape(mdp, f, "cotm_ratio");
    double num = 0.0;
    for (const auto& wt : enumerate_trajectory_distribution(mdp, pi))
        num += wt.prob * traj_f_sum(f, wt.traj);
    double den = 0.0;
    for (const auto& wt : enumerate_trajectory_distribution(mdp, mu)) {
        const double s = traj_f_sum(f, wt.traj);
        den += wt.prob * s * s;
    }
    if (!(den > 0.0))
        throw InvalidArgument("cotm_ratio: E_mu[(sum f)^2] = 0; degenerate test function");
    CotmCertificate cert;
    cert.lhs_ratio = num * num / den;
    cert.bound_chi = bound_chi_layers(mdp, pi, mu);
    cert.bound_csa = (double)mdp.horizon * c_sa(mdp, pi, mu);
    cert.f_kind = CotmCertificate::FKind::User;
    cert.feasible = true;
    return cert;
}

CotmCertificate cotm_sup_ratio(const LayeredMdp& mdp, const Policy& pi, const Policy& mu) {
    // pair index over all (h, s, a)
    std::vector<std::vector<std::vector<int>>> index(mdp.horizon);
    int dim = 0;
    for (int h = 0; h < mdp.horizon; ++h) {
        index[h].resize(mdp.layer_sizes[h]);
        for (int s = 0; s < mdp.layer_sizes[h]; ++s) {
            index[h][s].resize(mdp.actions_at(h, s));
            for (int a = 0; a < mdp.actions_at(h, s); ++a) index[h][s][a] = dim++;
        }
    }

    OccupancyTable dpi = occupancy(mdp, pi);
    Eigen::VectorXd u = Eigen::VectorXd::Zero(dim);
    for (int h = 0; h < mdp.horizon; ++h)
        for (int s = 0; s < mdp.layer_sizes[h]; ++s)
            for (int a = 0; a < mdp.actions_at(h, s); ++a) u[index[h][s][a]] = dpi.at(h, s, a);

    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(dim, dim);
    for (const auto& wt : enumerate_trajectory_distribution(mdp, mu)) {
        std::vector<int> visited(wt.traj.length());
        for (int h = 0; h < wt.traj.length(); ++h)
            visited[h] = index[h][wt.traj.states[h]][wt.traj.actions[h]];
        for (int i : visited)
            for (int j : visited) M(i, j) += wt.prob;
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(M);
    const Eigen::VectorXd& lambda = eig.eigenvalues();
    const Eigen::MatrixXd& V = eig.eigenvectors();
    const double cutoff = 1e-10 * std::max(lambda.cwiseAbs().maxCoeff(), 0.0);
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(dim);
    for (int i = 0; i < dim; ++i) inv[i] = lambda[i] > cutoff ? 1.0 / lambda[i] : 0.0;
    const Eigen::VectorXd vtu = V.transpose() * u;
    const double sup = (vtu.array().square() * inv.array()).sum();

    // feasibility: projection of u onto range(M) must carry essentially all of u
    Eigen::VectorXd residual = u;
    for (int i = 0; i < dim; ++i)
        if (lambda[i] > cutoff) residual -= vtu[i] * V.col(i);

    CotmCertificate cert;
    cert.lhs_ratio = sup;
    cert.bound_chi = bound_chi_layers(mdp, pi, mu);
    cert.bound_csa = (double)mdp.horizon * c_sa(mdp, pi, mu);
    cert.f_kind = CotmCertificate::FKind::Supremum;
    cert.feasible = residual.norm() <= 1e-8 * std::max(u.norm(), 1e-300);
    return cert;
}

FbarCheck fbar_decomposition_check(const LayeredMdp& mdp, const Policy& mu, const PairTable& f) {
    check_pair_shape(mdp, f, "fbar_decomposition_check");
    mu.validate(mdp);

    // fbar(s_h) = E_mu[ f(s_h, a_h) + fbar(s_{h+1}) | s_h ], fbar(terminal) = 0
    std::vector<std::vector<double>> fbar(mdp.horizon + 1);
    fbar[mdp.horizon].assign(mdp.layer_sizes[mdp.horizon], 0.0);
    for (int h = mdp.horizon - 1; h >= 0; --h) {
        fbar[h].assign(mdp.layer_sizes[h], 0.0);
        for (int s = 0; s < mdp.layer_sizes[h]; ++s) {
            double acc = 0.0;
            for (int a = 0; a < mdp.actions_at(h, s); ++a) {
                const double pa = mu.table[h][s][a];
                if (!(pa > 0.0)) continue;
                double ev = 0.0;
                for (const auto& e : mdp.transition[h][s][a]) ev += e.prob * fbar[h + 1][e.next];
                acc += pa * (f.at(h, s, a) + ev);
            }
            fbar[h][s] = acc;
        }
    }

    FbarCheck out;
    for (const auto& wt : enumerate_trajectory_distribution(mdp, mu)) {
        const double total = traj_f_sum(f, wt.traj);
        out.lhs += wt.prob * total * total;
        double inner = fbar[0][wt.traj.states[0]] * fbar[0][wt.traj.states[0]];
        for (int h = 0; h < mdp.horizon; ++h) {
            const double next_fbar =
                h + 1 < mdp.horizon ? fbar[h + 1][wt.traj.states[h + 1]] : 0.0;
            const double martingale = f.at(h, wt.traj.states[h], wt.traj.actions[h]) + next_fbar -
                                      fbar[h][wt.traj.states[h]];
            inner += martingale * martingale;
        }
        out.rhs += wt.prob * inner;
    }
    out.abs_diff = std::abs(out.lhs - out.rhs);
    return out;
}

PerfDiffCheck perf_diff_check(const LayeredMdp& mdp, double beta, const Policy& piref,
                              const PairTable& q, const Policy& pi, const Policy& pi_dagger) {
    check_pair_shape(mdp, q, "perf_diff_check");
    std::string diag;
    const double j_dag = j_beta(mdp, pi_dagger, beta, piref, &diag);
    const double j_pi = j_beta(mdp, pi, beta, piref, &diag);
    if (!std::isfinite(j_dag) || !std::isfinite(j_pi))
        throw ReferenceSupportError("perf_diff_check: " + diag);

    OccupancyTable d_dag = occupancy(mdp, pi_dagger);
    OccupancyTable d_pi = occupancy(mdp, pi);

    PerfDiffCheck out;
    out.lhs = (j_dag - j_pi) / beta;

    for (int h = 0; h < mdp.horizon; ++h)
        for (int s = 0; s < mdp.layer_sizes[h]; ++s) {
            // per-state pieces of the third term, weighted by pi_dagger's state occupancy
            const double ds = d_dag.state(h, s);
            if (ds > 0.0) {
                double e_dag = 0.0, e_pi = 0.0;
                for (int a = 0; a < mdp.actions_at(h, s); ++a) {
                    const double pd = pi_dagger.table[h][s][a];
                    if (pd > 0.0) e_dag += pd * (q.at(h, s, a) - std::log(pd));
                    const double pp = pi.table[h][s][a];
                    if (pp > 0.0) e_pi += pp * (q.at(h, s, a) - std::log(pp));
                }
                out.policy_term += ds * (e_dag - e_pi);
            }
            for (int a = 0; a < mdp.actions_at(h, s); ++a) {
                const double occ_dag = d_dag.at(h, s, a);
                const double occ_pi = d_pi.at(h, s, a);
                if (!(occ_dag > 0.0) && !(occ_pi > 0.0)) continue;
                const double tq = soft_bellman_apply(mdp, beta, piref, q, pi, h, s, a);
                const double residual = q.at(h, s, a) - tq;
                if (occ_dag > 0.0) out.bellman_dagger -= occ_dag * residual;
                if (occ_pi > 0.0) out.bellman_pi += occ_pi * residual;
            }
        }
    out.rhs = out.bellman_dagger + out.bellman_pi + out.policy_term;
    out.abs_diff = std::abs(out.lhs - out.rhs);
    return out;
}

SuboptBound subopt_and_bound(const LayeredMdp& mdp, double beta, const Policy& piref,
                             const TabularLogitModel& model) {
    TabularLogitModel star = soft_value_iteration(mdp, beta, piref);
    Policy pi_star = star.policy(mdp);
    Policy pi_q = model.policy(mdp);

    SuboptBound out;
    out.subopt = j_beta(mdp, pi_star, beta, piref) - j_beta(mdp, pi_q, beta, piref);

    double worst = 0.0;
    for (const Policy* pi : {&pi_star, &pi_q}) {
        OccupancyTable d = occupancy(mdp, *pi);
        double expected = 0.0;
        for (int h = 0; h < mdp.horizon; ++h)
            for (int s = 0; s < mdp.layer_sizes[h]; ++s)
                for (int a = 0; a < mdp.actions_at(h, s); ++a) {
                    const double occ = d.at(h, s, a);
                    if (!(occ > 0.0)) continue;
                    const double tq =
                        soft_bellman_apply(mdp, beta, piref, model.logits, h, s, a);
                    expected += occ * (model.logits.at(h, s, a) - tq);
                }
        worst = std::max(worst, std::abs(expected));
    }
    out.bound = 2.0 * beta * worst;
    return out;
}

TrendResult theorem_trend(const LayeredMdp& mdp, double beta, const Policy& piref,
                          const Policy& mu, const std::vector<long>& sample_sizes,
                          const std::vector<uint64_t>& seeds, const TrainConfig& fit_cfg) {
    if (sample_sizes.empty() || seeds.empty())
        throw InvalidArgument("theorem_trend: need sample sizes and seeds");
    mu.validate(mdp);

    TrendResult out;
    for (size_t ni = 0; ni < sample_sizes.size(); ++ni) {
        const long n = sample_sizes[ni];
        std::vector<double> subopts;
        for (size_t si = 0; si < seeds.size(); ++si) {
            Rng rng(mix_seed(seeds[si], (uint64_t)ni));
            TrajectoryDataset data;
            data.per_step_rewards_available = !mdp.outcome_only_rewards();
            data.items = rollout(mdp, mu, rng, n);
            TrainConfig cfg = fit_cfg;
            cfg.beta = beta;
            cfg.seed = mix_seed(seeds[si], 1000003ULL + ni);
            TrainResult fit = offline_fit(mdp, piref, data, cfg);
            subopts.push_back(fit.log.final_subopt());
        }
        std::sort(subopts.begin(), subopts.end());
        const size_t k = subopts.size();
        const double median =
            k % 2 == 1 ? subopts[k / 2] : 0.5 * (subopts[k / 2 - 1] + subopts[k / 2]);
        out.points.push_back({n, median});
    }

    // least-squares slope in log-log space
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double floor = 1e-300;
    for (const auto& p : out.points) {
        const double x = std::log((double)p.n);
        const double y = std::log(std::max(p.median_subopt, floor));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double k = (double)out.points.size();
    out.loglog_slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);

    out.nonincreasing_steps = 0;
    for (size_t i = 1; i < out.points.size(); ++i)
        if (out.points[i].median_subopt <= out.points[i - 1].median_subopt)
            ++out.nonincreasing_steps;
    return out;
}

}  // namespace softq
