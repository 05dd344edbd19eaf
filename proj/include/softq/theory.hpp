#pragma once

#include "softq/trainer.hpp"

namespace softq {

/// Witness for one change-of-trajectory-measure instance: the realized ratio
/// against its chi-square bound and the cruder horizon-times-concentrability
/// bound above it.
struct CotmCertificate {
    double lhs_ratio = 0.0;
    double bound_chi = 0.0;  // 1 + sum_h chi2(d_h^pi || d_h^mu)
    double bound_csa = 0.0;  // H * C_sa
    enum class FKind { Random, Supremum, User } f_kind = FKind::User;
    bool feasible = true;    // supremum oracle: u in range(M)
};

/// chi2(p || q) = sum_x p(x)^2 / q(x) - 1. Returns +inf (and the violating
/// atom index, when requested) if p has mass outside q's support.
double chi_square(const std::vector<double>& p, const std::vector<double>& q,
                  int* violating_atom = nullptr);

/// max_h sup_{s,a} d_h^pi / d_h^mu over pairs visited by pi.
double c_sa(const LayeredMdp& mdp, const Policy& pi, const Policy& mu);

/// 1 + max over the candidate policies and layers of chi2(d_h^pi || d_h^mu);
/// a finite-set surrogate (hence lower bound) for the max over all of Theta.
double concentrability_chi(const LayeredMdp& mdp, const Policy& mu,
                           const std::vector<Policy>& policy_set);

/// Ratio (E_pi[sum_h f])^2 / E_mu[(sum_h f)^2] by exact enumeration.
CotmCertificate cotm_ratio(const LayeredMdp& mdp, const Policy& pi, const Policy& mu,
                           const PairTable& f);

/// Supremum of the ratio over all f, via the generalized Rayleigh quotient
/// u' M^+ u with u = E_pi[phi], M = E_mu[phi phi'] and phi the 0/1
/// visit-indicator vector over (s, a) pairs.
CotmCertificate cotm_sup_ratio(const LayeredMdp& mdp, const Policy& pi, const Policy& mu);

struct FbarCheck {
    double lhs = 0.0;   // E_mu[(sum_h f)^2]
    double rhs = 0.0;   // E_mu[fbar(s_1)^2 + sum_h (f + fbar(s_{h+1}) - fbar(s_h))^2]
    double abs_diff = 0.0;
};

FbarCheck fbar_decomposition_check(const LayeredMdp& mdp, const Policy& mu, const PairTable& f);

struct PerfDiffCheck {
    double lhs = 0.0;       // (J_beta(pi_dagger) - J_beta(pi)) / beta
    double rhs = 0.0;
    double abs_diff = 0.0;
    double bellman_dagger = 0.0;  // E_{pi_dagger}[sum_h (T^pi Q - Q)]
    double bellman_pi = 0.0;      // E_pi[sum_h (Q - T^pi Q)]
    double policy_term = 0.0;
};

PerfDiffCheck perf_diff_check(const LayeredMdp& mdp, double beta, const Policy& piref,
                              const PairTable& q, const Policy& pi, const Policy& pi_dagger);

struct SuboptBound {
    double subopt = 0.0;
    double bound = 0.0;  // 2 beta max_{pi in {pi*, pi_Q}} |E_pi[sum_h (Q - T_beta Q)]|
};

SuboptBound subopt_and_bound(const LayeredMdp& mdp, double beta, const Policy& piref,
                             const TabularLogitModel& model);

struct TrendPoint {
    long n = 0;
    double median_subopt = 0.0;
};

struct TrendResult {
    std::vector<TrendPoint> points;
    double loglog_slope = 0.0;
    int nonincreasing_steps = 0;  // consecutive sample-size doublings that did not increase
};

/// For each sample size, fits the configured loss offline to fresh datasets
/// drawn from mu and reports the median suboptimality and the fitted log-log
/// slope of the decay.
TrendResult theorem_trend(const LayeredMdp& mdp, double beta, const Policy& piref,
                          const Policy& mu, const std::vector<long>& sample_sizes,
                          const std::vector<uint64_t>& seeds, const TrainConfig& fit_cfg);

}  // namespace softq
