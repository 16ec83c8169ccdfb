// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "blockpg/envs.hpp"
#include "blockpg/error.hpp"

namespace blockpg::envs {

void TabularMDP::validate() const {
  if (states == 0 || states > 50) throw ConfigError("mdp: state count must be in 1..50");
  if (actions == 0 || actions > 8) throw ConfigError("mdp: action count must be in 1..8");
  if (transition.size() != states * actions * states) throw ConfigError("mdp: transition table has wrong size");
  if (reward.size() != states * actions) throw ConfigError("mdp: reward table has wrong size");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("mdp: gamma must be in (0, 1]");
  if (horizon == 0 && gamma >= 1.0) throw ConfigError("mdp: infinite horizon needs gamma < 1");
  for (std::size_t s = 0; s < states; ++s) {
    for (std::size_t a = 0; a < actions; ++a) {
      double total = 0.0;
      for (std::size_t n = 0; n < states; ++n) {
        const double v = p(s, a, n);
        if (v < 0.0) throw ConfigError("mdp: negative transition probability");
        total += v;
      }
      if (std::abs(total - 1.0) > 1e-12) {
        throw ConfigError("mdp: P(.|" + std::to_string(s) + "," + std::to_string(a) + ") sums to " +
                          std::to_string(total));
      }
    }
  }
}

namespace {

void validate_policy(const TabularMDP& mdp, const TabularPolicy& policy) {
  if (policy.states != mdp.states || policy.actions != mdp.actions ||
      policy.probs.size() != mdp.states * mdp.actions) {
    throw InputError("policy shape does not match the MDP");
  }
  for (std::size_t s = 0; s < mdp.states; ++s) {
    double total = 0.0;
    for (std::size_t a = 0; a < mdp.actions; ++a) {
      if (policy(s, a) < 0.0) throw InputError("policy row " + std::to_string(s) + " has a negative entry");
      total += policy(s, a);
    }
    if (std::abs(total - 1.0) > 1e-12) {
      throw InputError("policy row " + std::to_string(s) + " is not a distribution (sums to " +
                       std::to_string(total) + ")");
    }
  }
}

// Q(s, a) = r(s, a) + gamma * sum_s' P(s'|s,a) V(s').
std::vector<double> q_from_v(const TabularMDP& mdp, const std::vector<double>& V) {
  std::vector<double> Q(mdp.states * mdp.actions);
  for (std::size_t s = 0; s < mdp.states; ++s)
    for (std::size_t a = 0; a < mdp.actions; ++a) {
      double next = 0.0;
      for (std::size_t n = 0; n < mdp.states; ++n) next += mdp.p(s, a, n) * V[n];
      Q[s * mdp.actions + a] = mdp.r(s, a) + mdp.gamma * next;
    }
  return Q;
}

std::vector<double> v_from_q(const TabularMDP& mdp, const TabularPolicy& pi, const std::vector<double>& Q) {
  std::vector<double> V(mdp.states, 0.0);
  for (std::size_t s = 0; s < mdp.states; ++s)
    for (std::size_t a = 0; a < mdp.actions; ++a) V[s] += pi(s, a) * Q[s * mdp.actions + a];
  return V;
}

}  // namespace

PolicyEvaluation value_iteration(const TabularMDP& mdp, const TabularPolicy& policy) {
  mdp.validate();
  validate_policy(mdp, policy);
  const std::size_t S = mdp.states;
  PolicyEvaluation out;

  if (mdp.horizon > 0) {
    std::vector<double> V(S, 0.0), Q;
    for (std::size_t h = 0; h < mdp.horizon; ++h) {
      Q = q_from_v(mdp, V);
      V = v_from_q(mdp, policy, Q);
    }
    out.V = std::move(V);
    out.Q = std::move(Q);
  } else {
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(S, S);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(S);
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t a = 0; a < mdp.actions; ++a) {
        const double w = policy(s, a);
        rhs(s) += w * mdp.r(s, a);
        for (std::size_t n = 0; n < S; ++n) M(s, n) -= mdp.gamma * w * mdp.p(s, a, n);
      }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(M);
    Eigen::VectorXd v = lu.solve(rhs);
    // One step of iterative refinement brings the residual to round-off level.
    v += lu.solve(rhs - M * v);
    out.V.assign(v.data(), v.data() + S);
    out.Q = q_from_v(mdp, out.V);
    const auto backed_up = v_from_q(mdp, policy, out.Q);
    for (std::size_t s = 0; s < S; ++s) out.residual = std::max(out.residual, std::abs(backed_up[s] - out.V[s]));
  }
  out.A.resize(out.Q.size());
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < mdp.actions; ++a) out.A[s * mdp.actions + a] = out.Q[s * mdp.actions + a] - out.V[s];
  return out;
}

double ReturnDistribution::expected_return() const {
  double e = 0.0;
  for (const auto& p : paths) e += p.probability * p.discounted_return;
  return e;
}

double ReturnDistribution::total_probability() const {
  double e = 0.0;
  for (const auto& p : paths) e += p.probability;
  return e;
}

ReturnDistribution enumerate_returns(const TabularMDP& mdp, const TabularPolicy& policy,
                                     std::size_t start, std::size_t horizon,
                                     std::optional<std::size_t> first_action, std::size_t limit) {
  mdp.validate();
  validate_policy(mdp, policy);
  if (start >= mdp.states) throw InputError("start state out of range");
  if (first_action && *first_action >= mdp.actions) throw InputError("first action out of range");

  ReturnDistribution out;
  TrajectoryPath seed;
  seed.states.push_back(start);
  seed.probability = 1.0;
  std::vector<TrajectoryPath> frontier{seed};
  for (std::size_t step = 0; step < horizon; ++step) {
    std::vector<TrajectoryPath> next;
    const double discount = std::pow(mdp.gamma, static_cast<double>(step));
    for (const auto& path : frontier) {
      const std::size_t s = path.states.back();
      for (std::size_t a = 0; a < mdp.actions; ++a) {
        double pa = policy(s, a);
        if (step == 0 && first_action) pa = (a == *first_action) ? 1.0 : 0.0;
        if (pa == 0.0) continue;
        for (std::size_t n = 0; n < mdp.states; ++n) {
          const double pn = mdp.p(s, a, n);
          if (pn == 0.0) continue;
          if (next.size() >= limit) {
            throw ResourceError("trajectory enumeration exceeds " + std::to_string(limit) + " paths");
          }
          TrajectoryPath ext = path;
          ext.actions.push_back(a);
          ext.rewards.push_back(mdp.r(s, a));
          ext.states.push_back(n);
          ext.probability *= pa * pn;
          ext.discounted_return += discount * mdp.r(s, a);
          next.push_back(std::move(ext));
        }
      }
    }
    frontier = std::move(next);
  }
  out.paths = std::move(frontier);
  return out;
}

TabularMDP random_mdp(std::size_t states, std::size_t actions, std::size_t successors, double gamma,
                      std::size_t horizon, std::mt19937_64& rng) {
  TabularMDP mdp;
  mdp.states = states;
  mdp.actions = actions;
  mdp.gamma = gamma;
  mdp.horizon = horizon;
  mdp.transition.assign(states * actions * states, 0.0);
  mdp.reward.resize(states * actions);
  successors = std::clamp<std::size_t>(successors, 1, states);
  std::vector<std::size_t> order(states);
  for (std::size_t s = 0; s < states; ++s) {
    for (std::size_t a = 0; a < actions; ++a) {
      mdp.reward[s * actions + a] = 2.0 * model::uniform01(rng) - 1.0;
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t i = 0; i < successors; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(model::uniform01(rng) * static_cast<double>(states - i));
        std::swap(order[i], order[j]);
      }
      std::vector<double> w(successors);
      double total = 0.0;
      for (double& v : w) total += (v = 0.1 + model::uniform01(rng));
      // Normalize, then put the rounding remainder on the first successor so
      // each row sums to 1 within an ulp or two.
      double acc = 0.0;
      for (std::size_t i = 1; i < successors; ++i) {
        const double p = w[i] / total;
        mdp.transition[(s * actions + a) * states + order[i]] = p;
        acc += p;
      }
      mdp.transition[(s * actions + a) * states + order[0]] = 1.0 - acc;
    }
  }
  return mdp;
}

TabularPolicy random_policy(std::size_t states, std::size_t actions, std::mt19937_64& rng) {
  TabularPolicy pi{states, actions, std::vector<double>(states * actions)};
  for (std::size_t s = 0; s < states; ++s) {
    double total = 0.0;
    for (std::size_t a = 0; a < actions; ++a) total += (pi.probs[s * actions + a] = 0.05 + model::uniform01(rng));
    double acc = 0.0;
    for (std::size_t a = 1; a < actions; ++a) acc += (pi.probs[s * actions + a] /= total);
    pi.probs[s * actions] = 1.0 - acc;
  }
  return pi;
}

std::string format_mdp(const TabularMDP& mdp) {
  std::ostringstream os;
  char buf[32];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  os << "blockpg-mdp 1\n"
     << "states " << mdp.states << "\n"
     << "actions " << mdp.actions << "\n"
     << "gamma " << num(mdp.gamma) << "\n"
     << "horizon " << mdp.horizon << "\n"
     << "reward\n";
  for (std::size_t s = 0; s < mdp.states; ++s) {
    for (std::size_t a = 0; a < mdp.actions; ++a) os << (a ? " " : "") << num(mdp.r(s, a));
    os << "\n";
  }
  os << "transition\n";
  for (std::size_t row = 0; row < mdp.states * mdp.actions; ++row) {
    for (std::size_t n = 0; n < mdp.states; ++n) os << (n ? " " : "") << num(mdp.transition[row * mdp.states + n]);
    os << "\n";
  }
  return os.str();
}

TabularMDP parse_mdp(const std::string& text) {
  // Strip comments, then read whitespace-separated tokens.
  std::istringstream lines(text);
  std::ostringstream clean;
  std::string line;
  while (std::getline(lines, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    clean << line << '\n';
  }
  std::istringstream is(clean.str());
  auto expect = [&](const char* word) {
    std::string got;
    if (!(is >> got) || got != word) throw InputError(std::string("mdp text: expected '") + word + "'");
  };
  TabularMDP mdp;
  int version = 0;
  expect("blockpg-mdp");
  if (!(is >> version) || version != 1) throw InputError("mdp text: unsupported version");
  expect("states");
  is >> mdp.states;
  expect("actions");
  is >> mdp.actions;
  expect("gamma");
  is >> mdp.gamma;
  expect("horizon");
  is >> mdp.horizon;
  if (!is) throw InputError("mdp text: malformed header");
  expect("reward");
  mdp.reward.resize(mdp.states * mdp.actions);
  for (double& v : mdp.reward)
    if (!(is >> v)) throw InputError("mdp text: truncated reward table");
  expect("transition");
  mdp.transition.resize(mdp.states * mdp.actions * mdp.states);
  for (double& v : mdp.transition)
    if (!(is >> v)) throw InputError("mdp text: truncated transition table");
  mdp.validate();
  return mdp;
}

void save_mdp(const std::string& path, const TabularMDP& mdp) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "# tabular MDP\n" << format_mdp(mdp);
  if (!os) throw IoError("write to '" + path + "' failed");
}

TabularMDP load_mdp(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_mdp(ss.str());
}

}  // namespace blockpg::envs
