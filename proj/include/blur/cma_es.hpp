#pragma once

#include "blur/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <functional>
#include <numeric>
#include <vector>

namespace blur {

struct CmaOptions {
  int lambda = 0;       // population size; 0 = 4 + floor(3 ln n)
  int mu = 0;           // parents; 0 = lambda / 2
  double sigma0 = 0.1;  // initial step size
  int max_generations = 100;
  std::uint64_t seed = 0;
  // Early stop once the best-ever fitness reaches this value.
  double target_fitness = std::numeric_limits<double>::infinity();
};

// Covariance matrix adaptation evolution strategy (maximization convention).
// Weighted recombination of the mu best, cumulative step-size adaptation and
// the rank-one plus rank-mu covariance update, with the standard
// dimension-dependent default constants.
//
// Usage per generation: sample_population() -> evaluate -> update(fitnesses).
// Candidate evaluation can happen in parallel as long as the fitness vector
// keeps the candidate order.
class CmaEs {
 public:
  CmaEs(Vector x0, const CmaOptions& options)
      : opts_(options), n_(static_cast<int>(x0.size())), rng_(options.seed), mean_(std::move(x0)) {
    if (n_ < 1) throw ValidationError("cma-es: empty parameter vector");
    lambda_ = opts_.lambda > 0 ? opts_.lambda
                               : 4 + static_cast<int>(3.0 * std::log(static_cast<double>(n_)));
    if (lambda_ < 4) throw ValidationError("cma-es: population must be >= 4");
    mu_ = opts_.mu > 0 ? opts_.mu : lambda_ / 2;
    if (mu_ < 1 || mu_ > lambda_) throw ValidationError("cma-es: parents must be in [1, lambda]");
    if (!(opts_.sigma0 > 0.0)) throw ValidationError("cma-es: sigma0 must be positive");

    weights_.resize(mu_);
    for (int i = 0; i < mu_; ++i)
      weights_[i] = std::log(static_cast<double>(lambda_ + 1) / 2.0) - std::log(i + 1.0);
    const double wsum = std::accumulate(weights_.begin(), weights_.end(), 0.0);
    for (double& w : weights_) w /= wsum;
    double wsq = 0.0;
    for (double w : weights_) wsq += w * w;
    mu_eff_ = 1.0 / wsq;

    const double n = static_cast<double>(n_);
    c_sigma_ = (mu_eff_ + 2.0) / (n + mu_eff_ + 5.0);
    d_sigma_ = 1.0 + 2.0 * std::max(0.0, std::sqrt((mu_eff_ - 1.0) / (n + 1.0)) - 1.0) + c_sigma_;
    c_c_ = (4.0 + mu_eff_ / n) / (n + 4.0 + 2.0 * mu_eff_ / n);
    c_1_ = 2.0 / ((n + 1.3) * (n + 1.3) + mu_eff_);
    c_mu_ = std::min(1.0 - c_1_, 2.0 * (mu_eff_ - 2.0 + 1.0 / mu_eff_) /
                                     ((n + 2.0) * (n + 2.0) + mu_eff_));
    expected_norm_ = std::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

    sigma_ = opts_.sigma0;
    cov_ = Matrix::Identity(n_, n_);
    path_sigma_ = Vector::Zero(n_);
    path_cov_ = Vector::Zero(n_);
    decompose();
  }

  int dimension() const { return n_; }
  int lambda() const { return lambda_; }
  int generation() const { return generation_; }
  double sigma() const { return sigma_; }
  const Vector& mean() const { return mean_; }
  const Vector& best_ever() const { return best_x_; }
  double best_ever_fitness() const { return best_fitness_; }
  long clamped_evaluations() const { return clamped_; }
  bool reached_target() const { return best_fitness_ >= opts_.target_fitness; }

  // Draws the generation's lambda candidates: x = m + sigma * B * D * z.
  const std::vector<Vector>& sample_population() {
    population_.resize(static_cast<std::size_t>(lambda_));
    z_samples_.resize(static_cast<std::size_t>(lambda_));
    for (int i = 0; i < lambda_; ++i) {
      Vector z(n_);
      for (int j = 0; j < n_; ++j) z[j] = rng_.normal();
      z_samples_[static_cast<std::size_t>(i)] = z;
      population_[static_cast<std::size_t>(i)] = mean_ + sigma_ * (basis_scaled_ * z);
    }
    return population_;
  }

  // Consumes the fitness (higher is better) of the sampled candidates. NaN or
  // infinite entries are clamped to the worst finite fitness in the
  // generation and counted.
  void update(std::vector<double> fitness) {
    if (fitness.size() != population_.size())
      throw ValidationError("cma-es: fitness count does not match population");
    double worst = std::numeric_limits<double>::infinity();
    for (double f : fitness)
      if (std::isfinite(f)) worst = std::min(worst, f);
    if (!std::isfinite(worst)) worst = 0.0;  // whole generation invalid
    for (double& f : fitness) {
      if (!std::isfinite(f)) {
        f = worst;
        ++clamped_;
      }
    }

    std::vector<int> order(static_cast<std::size_t>(lambda_));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return fitness[a] > fitness[b]; });

    if (fitness[static_cast<std::size_t>(order[0])] > best_fitness_) {
      best_fitness_ = fitness[static_cast<std::size_t>(order[0])];
      best_x_ = population_[static_cast<std::size_t>(order[0])];
    }

    const Vector old_mean = mean_;
    Vector z_mean = Vector::Zero(n_);
    mean_ = Vector::Zero(n_);
    for (int i = 0; i < mu_; ++i) {
      const auto idx = static_cast<std::size_t>(order[i]);
      mean_ += weights_[i] * population_[idx];
      z_mean += weights_[i] * z_samples_[idx];
    }

    // Step-size path uses C^{-1/2}(m - m_old)/sigma = B z_mean.
    path_sigma_ = (1.0 - c_sigma_) * path_sigma_ +
                  std::sqrt(c_sigma_ * (2.0 - c_sigma_) * mu_eff_) * (basis_ * z_mean);
    const double path_norm = path_sigma_.norm();
    const double expected =
        std::sqrt(1.0 - std::pow(1.0 - c_sigma_, 2.0 * (generation_ + 1)));
    const bool h_sigma =
        path_norm / expected < (1.4 + 2.0 / (n_ + 1.0)) * expected_norm_;

    const Vector y_mean = (mean_ - old_mean) / sigma_;
    path_cov_ = (1.0 - c_c_) * path_cov_;
    if (h_sigma) path_cov_ += std::sqrt(c_c_ * (2.0 - c_c_) * mu_eff_) * y_mean;

    Matrix rank_mu = Matrix::Zero(n_, n_);
    for (int i = 0; i < mu_; ++i) {
      const Vector y =
          (population_[static_cast<std::size_t>(order[i])] - old_mean) / sigma_;
      rank_mu.noalias() += weights_[i] * (y * y.transpose());
    }
    const double h_correction = h_sigma ? 0.0 : c_c_ * (2.0 - c_c_);
    cov_ = (1.0 - c_1_ - c_mu_) * cov_ +
           c_1_ * (path_cov_ * path_cov_.transpose() + h_correction * cov_) + c_mu_ * rank_mu;

    sigma_ *= std::exp((c_sigma_ / d_sigma_) * (path_norm / expected_norm_ - 1.0));
    if (!(sigma_ > 0.0) || !std::isfinite(sigma_))
      throw NumericError("cma-es: step size left (0, inf)");

    decompose();
    ++generation_;
  }

  // --- state (de)serialization for resumable runs ---------------------------

  nlohmann::ordered_json state_to_json() const {
    auto vec = [](const Vector& v) {
      return std::vector<double>(v.data(), v.data() + v.size());
    };
    nlohmann::ordered_json j;
    j["dimension"] = n_;
    j["lambda"] = lambda_;
    j["mu"] = mu_;
    j["generation"] = generation_;
    j["sigma"] = sigma_;
    j["mean"] = vec(mean_);
    j["path_sigma"] = vec(path_sigma_);
    j["path_cov"] = vec(path_cov_);
    std::vector<double> cov(cov_.data(), cov_.data() + cov_.size());
    j["covariance"] = cov;
    j["best_fitness"] = best_fitness_;
    j["best_x"] = best_x_.size() ? vec(best_x_) : std::vector<double>{};
    j["clamped"] = clamped_;
    return j;
  }

  void state_from_json(const nlohmann::json& j) {
    if (j.at("dimension").get<int>() != n_ || j.at("lambda").get<int>() != lambda_ ||
        j.at("mu").get<int>() != mu_)
      throw ConfigError("cma-es: resume state does not match the configuration");
    auto vec = [&](const char* key) {
      auto v = j.at(key).get<std::vector<double>>();
      return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    generation_ = j.at("generation").get<int>();
    sigma_ = j.at("sigma").get<double>();
    mean_ = vec("mean");
    path_sigma_ = vec("path_sigma");
    path_cov_ = vec("path_cov");
    auto cov = j.at("covariance").get<std::vector<double>>();
    if (static_cast<int>(cov.size()) != n_ * n_)
      throw ConfigError("cma-es: resume covariance has the wrong size");
    cov_ = Eigen::Map<const Matrix>(cov.data(), n_, n_);
    best_fitness_ = j.at("best_fitness").get<double>();
    auto bx = j.at("best_x").get<std::vector<double>>();
    best_x_ = bx.empty() ? Vector()
                         : Vector(Eigen::Map<const Vector>(
                               bx.data(), static_cast<Eigen::Index>(bx.size())));
    clamped_ = j.at("clamped").get<long>();
    // Fresh sampling stream tied to the resume point, so a resumed run is
    // itself reproducible without replaying skipped draws.
    rng_ = Rng(mix_seed(opts_.seed, static_cast<std::uint64_t>(generation_)));
    decompose();
  }

 private:
  void decompose() {
    cov_ = 0.5 * (cov_ + cov_.transpose());  // keep exact symmetry
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov_);
    if (eig.info() != Eigen::Success)
      throw NumericError("cma-es: covariance factorization failed");
    if (eig.eigenvalues().minCoeff() <= 0.0)
      throw NumericError("cma-es: covariance lost positive definiteness");
    const Vector d = eig.eigenvalues().cwiseSqrt();
    basis_ = eig.eigenvectors();                       // B
    basis_scaled_ = eig.eigenvectors() * d.asDiagonal();  // B D
  }

  CmaOptions opts_;
  int n_;
  int lambda_ = 0;
  int mu_ = 0;
  std::vector<double> weights_;
  double mu_eff_ = 0, c_sigma_ = 0, d_sigma_ = 0, c_c_ = 0, c_1_ = 0, c_mu_ = 0;
  double expected_norm_ = 0;

  Rng rng_;
  Vector mean_;
  double sigma_ = 0.1;
  Matrix cov_;
  Vector path_sigma_, path_cov_;
  Matrix basis_, basis_scaled_;

  int generation_ = 0;
  std::vector<Vector> population_;
  std::vector<Vector> z_samples_;
  Vector best_x_;
  double best_fitness_ = -std::numeric_limits<double>::infinity();
  long clamped_ = 0;
};

struct CmaResult {
  Vector best_x;
  double best_fitness = 0.0;
  std::vector<double> best_trace;   // best fitness within each generation
  std::vector<double> mean_trace;   // mean fitness within each generation
  std::vector<double> sigma_trace;  // step size after each generation
  int generations = 0;
};

// Serial convenience driver for plain vector objectives (higher is better).
inline CmaResult cma_es_optimize(const std::function<double(const Vector&)>& fitness,
                                 const Vector& x0, const CmaOptions& options) {
  CmaEs es(x0, options);
  CmaResult result;
  for (int g = 0; g < options.max_generations; ++g) {
    const auto& pop = es.sample_population();
    std::vector<double> f(pop.size());
    for (std::size_t i = 0; i < pop.size(); ++i) f[i] = fitness(pop[i]);
    double best = -std::numeric_limits<double>::infinity(), sum = 0.0;
    for (double v : f) {
      if (std::isfinite(v)) {
        best = std::max(best, v);
        sum += v;
      }
    }
    result.best_trace.push_back(best);
    result.mean_trace.push_back(sum / static_cast<double>(f.size()));
    es.update(std::move(f));
    result.sigma_trace.push_back(es.sigma());
    ++result.generations;
    if (es.reached_target()) break;
  }
  result.best_x = es.best_ever();
  result.best_fitness = es.best_ever_fitness();
  return result;
}

}  // namespace blur
