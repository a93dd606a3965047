#include "optdesign/search.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>

#include "optdesign/pvs_sampler.hpp"

namespace optdesign {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double matrix_objective(const Eigen::MatrixXd& m, Criterion which) {
  try {
    return log_criterion(m, which);
  } catch (const SingularMatrixError&) {
    return kInf;
  }
}

/// Running record of the best design; enforces a nonincreasing objective.
class Tracker {
 public:
  Tracker(const SearchProblem& problem, PointSet initial)
      : problem_(problem), start_(Clock::now()) {
    trace_.best = std::move(initial);
    check_feasible(trace_.best);
    trace_.best_objective = design_objective(problem_.basis, problem_.prior, trace_.best, problem_.which);
    record(0);
  }

  double best_objective() const { return trace_.best_objective; }
  const PointSet& best() const { return trace_.best; }

  /// Replaces the best design iff `objective` is strictly lower.
  bool offer(PointSet design, double objective) {
    if (!(objective < trace_.best_objective)) return false;
    check_feasible(design);
    ensure(objective < trace_.best_objective, "search trace must be nonincreasing");
    trace_.best = std::move(design);
    trace_.best_objective = objective;
    ++trace_.accepted;
    return true;
  }

  void record(int iteration) {
    if (!trace_.records.empty())
      ensure(trace_.best_objective <= trace_.records.back().criterion_log || std::isnan(trace_.records.back().criterion_log),
             "search trace must be nonincreasing");
    trace_.records.push_back({iteration, trace_.best_objective, seconds_since(start_)});
  }

  void skip(const std::string& warning) {
    ++trace_.skipped;
    trace_.warnings.push_back(warning);
  }

  SearchTrace finish() { return std::move(trace_); }

 private:
  void check_feasible(const PointSet& design) const {
    if (!problem_.space) return;
    for (Eigen::Index i = 0; i < design.rows(); ++i)
      ensure(problem_.space->contains(design.row(i).transpose()), "search produced an infeasible point");
  }

  const SearchProblem& problem_;
  Clock::time_point start_;
  SearchTrace trace_;
};

void validate(const SearchProblem& problem) {
  if (problem.k < 1) throw Error("k must be at least 1");
  if (problem.prior.size() != problem.basis.size()) throw DimensionMismatch("prior size does not match basis size");
  if (problem.space && problem.space->dimension() != problem.basis.dimension())
    throw DimensionMismatch("basis and space dimensions differ");
}

PointSet initial_design(const SearchProblem& problem, std::optional<PointSet> initial, Rng& rng) {
  if (initial) {
    if (initial->rows() != problem.k || initial->cols() != problem.basis.dimension())
      throw DimensionMismatch("initial design must have k rows of the space dimension");
    return std::move(*initial);
  }
  if (!problem.space) throw Error("a design space is required for a random initial design");
  return problem.space->sample_uniform(problem.k, rng);
}

/// Rows of `a` then rows of `b` that are not exact duplicates of an earlier row.
PointSet unique_union(const PointSet& a, const PointSet& b) {
  PointSet out(a.rows() + b.rows(), a.cols());
  Eigen::Index n = 0;
  auto push = [&](const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    for (Eigen::Index i = 0; i < n; ++i)
      if (out.row(i) == row) return;
    out.row(n++) = row;
  };
  for (Eigen::Index i = 0; i < a.rows(); ++i) push(a.row(i));
  for (Eigen::Index i = 0; i < b.rows(); ++i) push(b.row(i));
  out.conservativeResize(n, Eigen::NoChange);
  return out;
}

/// Objective of the design with row j replaced, from the rank-one decomposition of M.
class OnePointObjective {
 public:
  OnePointObjective(const SearchProblem& problem, const PointSet& design, Eigen::Index j)
      : problem_(problem) {
    const Eigen::MatrixXd phi = problem.basis.design_matrix(design);
    rest_ = problem.prior.matrix();
    for (Eigen::Index i = 0; i < phi.rows(); ++i)
      if (i != j) rest_.noalias() += phi.row(i).transpose() * phi.row(i);
  }

  double operator()(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    const Eigen::VectorXd f = problem_.basis.evaluate(x);
    return matrix_objective(symmetrize(rest_ + f * f.transpose()), problem_.which);
  }

 private:
  const SearchProblem& problem_;
  Eigen::MatrixXd rest_;
};

/// Coordinate-wise golden-section descent from x inside the bounding box, with
/// infeasible probes scored +inf and the search interval halved every round.
std::pair<Point, double> local_descent(const OnePointObjective& f, const Space& space, Point x, int budget) {
  const Box& box = space.bounding_box();
  const int d = static_cast<int>(x.size());
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double fx = space.contains(x) ? f(x) : kInf;
  int used = 1;
  Eigen::VectorXd half = 0.5 * (box.hi - box.lo);
  auto probe = [&](Point& y) {
    ++used;
    return space.contains(y) ? f(y) : kInf;
  };
  while (used < budget) {
    for (int c = 0; c < d && used < budget; ++c) {
      double a = std::max(box.lo[c], x[c] - half[c]);
      double b = std::min(box.hi[c], x[c] + half[c]);
      Point y = x;
      for (double end : {a, b}) {
        if (used >= budget) break;
        y[c] = end;
        const double fy = probe(y);
        if (fy < fx) fx = fy, x[c] = end;
      }
      double u = b - ratio * (b - a), v = a + ratio * (b - a);
      y[c] = u;
      double fu = used < budget ? probe(y) : kInf;
      y[c] = v;
      double fv = used < budget ? probe(y) : kInf;
      for (int step = 0; step < 6 && used < budget; ++step) {
        if (fu <= fv) {
          b = v, v = u, fv = fu;
          u = b - ratio * (b - a);
          y[c] = u;
          fu = probe(y);
        } else {
          a = u, u = v, fu = fv;
          v = a + ratio * (b - a);
          y[c] = v;
          fv = probe(y);
        }
      }
      if (fu < fx) fx = fu, x[c] = u;
      if (fv < fx) fx = fv, x[c] = v;
    }
    half *= 0.5;
  }
  return {x, fx};
}

bool small_improvement(double before, double after, double relative) {
  if (!std::isfinite(before)) return !std::isfinite(after);
  return before - after < relative * std::max(std::abs(before), 1.0);
}

}  // namespace

double design_objective(const Basis& basis, const PriorMatrix& prior, const PointSet& design, Criterion which) {
  return matrix_objective(information_matrix(basis, design, prior), which);
}

SearchTrace dogs(const SearchProblem& problem, const DogsOptions& options, Rng& rng,
                 std::optional<PointSet> initial) {
  validate(problem);
  if (!problem.space) throw Error("dogs requires a design space");
  const ProposalConfig& proposal = options.proposal;
  const Eigen::Index forced = proposal.mode == ProposalMode::uniform_plus_candidates ? proposal.candidates.rows() : 0;
  if (proposal.size < 1) throw Error("proposal size must be positive");
  if (forced > proposal.size) throw Error("proposal size must be at least the number of candidates");

  Tracker tracker(problem, initial_design(problem, std::move(initial), rng));
  for (int it = 1; it <= options.iterations; ++it) {
    PointSet fresh(proposal.size, problem.basis.dimension());
    if (forced > 0) fresh.topRows(forced) = proposal.candidates;
    if (proposal.size > forced)
      fresh.bottomRows(proposal.size - forced) = problem.space->sample_uniform(static_cast<int>(proposal.size - forced), rng);
    const PointSet pool = unique_union(tracker.best(), fresh);
    try {
      const WeightSolution w =
          solve_discrete_weights(pool, problem.basis, problem.prior, problem.k, problem.which, options.relaxation);
      const DiscretePvsSampler sampler(pool, w.weights, problem.basis, problem.prior);
      const PointSample y = options.condition_on_k ? sampler.sample_conditional(problem.k, rng) : sampler.sample(rng);
      // Unconditioned draws of another size are not comparable and are dropped.
      if (y.size() == problem.k)
        tracker.offer(y.points, design_objective(problem.basis, problem.prior, y.points, problem.which));
    } catch (const Error& e) {
      tracker.skip("dogs iteration " + std::to_string(it) + " skipped: " + e.what());
    }
    tracker.record(it);
  }
  return tracker.finish();
}

SearchTrace lsa(const SearchProblem& problem, const LsaOptions& options, Rng& rng,
                std::optional<PointSet> initial) {
  validate(problem);
  if (!(options.sigma > 0.0)) throw Error("lsa sigma must be positive");
  if (!problem.space) throw Error("lsa requires a design space");
  Tracker tracker(problem, initial_design(problem, std::move(initial), rng));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int it = 1; it <= options.iterations; ++it) {
    PointSet y = tracker.best();
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      Point moved = y.row(i).transpose();
      for (Eigen::Index c = 0; c < moved.size(); ++c) moved[c] += options.sigma * noise(rng);
      if (problem.space->contains(moved)) y.row(i) = moved.transpose();
    }
    const double obj = design_objective(problem.basis, problem.prior, y, problem.which);
    tracker.offer(std::move(y), obj);
    tracker.record(it);
  }
  return tracker.finish();
}

SearchTrace exchange_continuous(const SearchProblem& problem, const ExchangeOptions& options, Rng& rng,
                                std::optional<PointSet> initial) {
  validate(problem);
  if (!problem.space) throw Error("exchange_continuous requires a design space");
  if (options.inner_budget < 1) throw Error("inner budget must be positive");
  Tracker tracker(problem, initial_design(problem, std::move(initial), rng));
  for (int sweep = 1; sweep <= options.sweeps; ++sweep) {
    const double before = tracker.best_objective();
    for (Eigen::Index j = 0; j < problem.k; ++j) {
      const OnePointObjective f(problem, tracker.best(), j);
      const PointSet starts = problem.space->sample_uniform(options.inner_budget, rng);
      Point best_x;
      double best_f = kInf;
      for (Eigen::Index s = 0; s < starts.rows(); ++s) {
        auto [x, fx] = local_descent(f, *problem.space, starts.row(s).transpose(), options.evaluations_per_start);
        if (fx < best_f) best_f = fx, best_x = std::move(x);
      }
      if (best_f < tracker.best_objective()) {
        PointSet next = tracker.best();
        next.row(j) = best_x.transpose();
        // Score the whole design the same way every other path does.
        const double obj = design_objective(problem.basis, problem.prior, next, problem.which);
        tracker.offer(std::move(next), obj);
      }
    }
    tracker.record(sweep);
    if (small_improvement(before, tracker.best_objective(), options.relative_stop)) break;
  }
  return tracker.finish();
}

SearchTrace exchange_discrete(const PointSet& candidates, const SearchProblem& problem,
                              const ExchangeOptions& options, Rng& rng, std::optional<PointSet> initial) {
  validate(problem);
  if (candidates.rows() < 1) throw Error("exchange_discrete needs at least one candidate");
  if (candidates.cols() != problem.basis.dimension()) throw DimensionMismatch("candidate dimension mismatch");
  PointSet start;
  if (initial) {
    start = initial_design(problem, std::move(initial), rng);
  } else {
    start.resize(problem.k, candidates.cols());
    std::uniform_int_distribution<Eigen::Index> pick(0, candidates.rows() - 1);
    for (int i = 0; i < problem.k; ++i) start.row(i) = candidates.row(pick(rng));
  }
  const Eigen::MatrixXd phi = problem.basis.design_matrix(candidates);
  Tracker tracker(problem, std::move(start));
  for (int sweep = 1; sweep <= options.sweeps; ++sweep) {
    bool changed = false;
    for (Eigen::Index j = 0; j < problem.k; ++j) {
      const PointSet& current = tracker.best();
      Eigen::MatrixXd rest = problem.prior.matrix();
      const Eigen::MatrixXd phi_x = problem.basis.design_matrix(current);
      for (Eigen::Index i = 0; i < phi_x.rows(); ++i)
        if (i != j) rest.noalias() += phi_x.row(i).transpose() * phi_x.row(i);
      Eigen::Index arg = -1;
      double best_f = kInf;
      for (Eigen::Index c = 0; c < phi.rows(); ++c) {
        const double fc = matrix_objective(symmetrize(rest + phi.row(c).transpose() * phi.row(c)), problem.which);
        if (fc < best_f) best_f = fc, arg = c;
      }
      if (arg < 0 || current.row(j) == candidates.row(arg)) continue;
      PointSet next = current;
      next.row(j) = candidates.row(arg);
      const double obj = design_objective(problem.basis, problem.prior, next, problem.which);
      if (tracker.offer(std::move(next), obj)) changed = true;
    }
    tracker.record(sweep);
    if (!changed) break;
  }
  return tracker.finish();
}

bool is_exchange_local_optimum(const PointSet& design, const PointSet& candidates, const Basis& basis,
                               const PriorMatrix& prior, Criterion which) {
  const double current = design_objective(basis, prior, design, which);
  for (Eigen::Index j = 0; j < design.rows(); ++j) {
    PointSet next = design;
    for (Eigen::Index c = 0; c < candidates.rows(); ++c) {
      next.row(j) = candidates.row(c);
      if (design_objective(basis, prior, next, which) < current) return false;
    }
  }
  return true;
}

PointSet grid_candidates(const Space& space, double step) {
  if (!(step > 0.0)) throw Error("grid step must be positive");
  const Box& box = space.bounding_box();
  const int d = space.dimension();
  std::vector<long> first(d), count(d);
  double total = 1.0;
  for (int c = 0; c < d; ++c) {
    first[c] = static_cast<long>(std::ceil(box.lo[c] / step - 1e-9));
    const long last = static_cast<long>(std::floor(box.hi[c] / step + 1e-9));
    count[c] = std::max(0L, last - first[c] + 1);
    total *= static_cast<double>(count[c]);
  }
  if (total > 1e7) throw InstanceTooLarge("grid has more than 1e7 lattice points; use a larger step");
  std::vector<Point> inside;
  Point x(d);
  const long n = static_cast<long>(total);
  for (long code = 0; code < n; ++code) {
    long rest = code;
    for (int c = d - 1; c >= 0; --c) {
      x[c] = static_cast<double>(first[c] + rest % count[c]) * step;
      rest /= count[c];
    }
    if (space.contains(x)) inside.push_back(x);
  }
  PointSet out(static_cast<Eigen::Index>(inside.size()), d);
  for (std::size_t i = 0; i < inside.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = inside[i].transpose();
  return out;
}

SearchTrace best_iid_design(const SearchProblem& problem, int count, Rng& rng) {
  validate(problem);
  if (!problem.space) throw Error("best_iid_design requires a design space");
  if (count < 1) throw Error("count must be positive");
  Tracker tracker(problem, problem.space->sample_uniform(problem.k, rng));
  for (int it = 1; it < count; ++it) {
    PointSet y = problem.space->sample_uniform(problem.k, rng);
    const double obj = design_objective(problem.basis, problem.prior, y, problem.which);
    tracker.offer(std::move(y), obj);
    tracker.record(it);
  }
  return tracker.finish();
}

}  // namespace optdesign
