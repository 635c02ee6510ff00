// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.
//
//   acceptance                    run everything
//   acceptance 3 7                run selected criteria
//   acceptance --known-failure 7  run everything, but do not let criterion 7
//                                 decide the exit code (it is still run and reported)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "cfr/analysis.hpp"
#include "cfr/ddu.hpp"
#include "cfr/error.hpp"
#include "cfr/model.hpp"
#include "cfr/pipeline.hpp"
#include "cfr/random.hpp"
#include "cfr/rollout.hpp"
#include "cfr/tensor_file.hpp"
#include "cli.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using cfr::Tensor;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects failures with a short reason; the first few are kept for the report.
class Checker {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (ok) return;
    ++failures_;
    if (failures_ <= 3) notes_ += (notes_.empty() ? "" : "; ") + what;
  }
  Outcome done(std::string detail) const {
    if (failures_ == 0) return {true, std::to_string(checks_) + " checks, " + detail};
    return {false, std::to_string(failures_) + "/" + std::to_string(checks_) + " checks failed: " + notes_ +
                       (detail.empty() ? "" : " | " + detail)};
  }

 private:
  std::size_t checks_ = 0, failures_ = 0;
  std::string notes_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor head_stack(std::initializer_list<Tensor> heads) {
  const auto& first = *heads.begin();
  Tensor out({heads.size(), first.dim(0), first.dim(1)});
  std::size_t h = 0;
  for (const auto& t : heads) {
    std::copy(t.data().begin(), t.data().end(), out.row(h).begin());
    ++h;
  }
  return out;
}

// ------------------------------------------------------------------ 1
Outcome fusion_unit() {
  Checker c;
  const Tensor ones = Tensor::filled({2, 2, 2}, 1.0);
  const Tensor prod = head_stack({Tensor::matrix({{1, -1}, {0, 2}}), Tensor::matrix({{3, 0}, {-4, 0}})});
  c.expect(cfr::fuse_block(ones, prod, ones).abar == Tensor::matrix({{3, 0}, {0, 2}}), "hand case");
  c.expect(cfr::fuse_block(ones, ones, prod).abar == Tensor::matrix({{3, 0}, {0, 2}}), "hand case (relevance side)");

  std::mt19937_64 rng(1);
  for (std::size_t T : {2u, 5u, 17u}) {
    const Tensor a = oracle::random_tensor({3, T, T}, rng, 0, 1);
    const Tensor r = oracle::random_tensor({3, T, T}, rng);
    c.expect(cfr::fuse_block(a, Tensor({3, T, T}), r).abar == Tensor::identity(T), "zero gradient");
    Tensor neg = r;
    for (auto& v : neg.data()) v = -v;
    c.expect(cfr::fuse_block(a, neg, r).abar == Tensor::identity(T), "non-positive products");
  }
  return c.done("exact equality");
}

// ------------------------------------------------------------------ 2
Outcome rollout_oracle() {
  Checker c;
  std::mt19937_64 rng(2);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t B = 1 + rng() % 6, T = 2 + rng() % 9, H = 1 + rng() % 4;
    std::vector<cfr::BlockFusion> blocks;
    for (std::size_t b = 0; b < B; ++b) {
      blocks.push_back(cfr::fuse_block(oracle::random_tensor({H, T, T}, rng, 0, 1),
                                       oracle::random_tensor({H, T, T}, rng),
                                       oracle::random_tensor({H, T, T}, rng)));
    }
    auto naive = oracle::to_mat(blocks[0].abar);
    for (std::size_t b = 1; b < B; ++b) naive = oracle::matmul(naive, oracle::to_mat(blocks[b].abar));
    const double diff = cfr::max_abs_diff(cfr::rollout_chain(blocks), oracle::from_mat(naive));
    worst = std::max(worst, diff);
    c.expect(diff < 1e-12, "chain " + std::to_string(trial) + " differs by " + fmt("%.3g", diff));
  }
  return c.done("max abs diff " + fmt("%.3g", worst));
}

// ------------------------------------------------------------------ 3
Outcome mahalanobis_oracle() {
  Checker c;
  std::mt19937_64 rng(3);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 1 + rng() % 8, K = 1 + rng() % 4;
    const auto cov = oracle::random_spd(d, rng);
    const Tensor means = oracle::random_tensor({K, d}, rng, -3, 3);
    const auto gd = cfr::make_discriminant(means, oracle::from_mat(cov), 0.0);
    const Tensor z = oracle::random_tensor({d}, rng, -5, 5);
    const std::vector<double> zv(z.data().begin(), z.data().end());
    for (std::size_t k = 0; k < K; ++k) {
      const std::vector<double> mu(means.row(k).begin(), means.row(k).end());
      const double diff = std::abs(cfr::mahalanobis(gd, zv, k) - oracle::mahalanobis(cov, zv, mu));
      worst = std::max(worst, diff);
      c.expect(diff < 1e-10, "case " + std::to_string(trial) + " differs by " + fmt("%.3g", diff));
      c.expect(cfr::mahalanobis(gd, mu, k) == 0.0, "z = mu is not 0");
    }
  }
  const auto id = cfr::make_discriminant(Tensor::matrix({{0, 0}}), Tensor::identity(2), 0.0);
  c.expect(std::abs(cfr::mahalanobis(id, std::vector<double>{3, 4}, 0) - 5.0) < 1e-15, "identity (3,4) != 5");
  return c.done("max abs diff " + fmt("%.3g", worst));
}

// ------------------------------------------------------------------ 4
Outcome gradient_fidelity() {
  Checker c;
  cfr::ModelConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.num_blocks = 2;
  cfg.num_heads = 2;
  cfg.embed_dim = 8;
  cfg.mlp_dim = 16;
  cfr::ModelParams p = cfr::init_params(cfg);
  // Move away from the zero biases and unit gains of the initializer.
  cfr::CounterRng jitter(44);
  for (auto& [name, t] : p.named())
    for (auto& v : t->data()) v += 0.2 * jitter.normal();
  Tensor img({3, 8, 8});
  cfr::CounterRng pix(45);
  for (auto& v : img.data()) v = pix.uniform();

  // Relative error against central differences; entries below 1e-6 in
  // magnitude are compared on that absolute scale instead.
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); };
  const double h = 1e-5;
  std::mt19937_64 rng(4);
  double worst = 0.0;
  std::size_t probes = 0;

  const std::size_t label = 1;
  const auto cache = cfr::forward(img, p, cfg).cache;
  const cfr::ModelParams grad = cfr::backward_params(cache, label, p);
  auto named = p.named();
  const auto gnamed = grad.named();
  for (int k = 0; k < 80; ++k) {
    const std::size_t which = rng() % named.size();
    Tensor& t = *named[which].second;
    const std::size_t i = rng() % t.size();
    const double keep = t[i];
    t[i] = keep + h;
    const double up = cfr::cross_entropy(cfr::forward(img, p, cfg).logits, label);
    t[i] = keep - h;
    const double down = cfr::cross_entropy(cfr::forward(img, p, cfg).logits, label);
    t[i] = keep;
    const double e = rel((*gnamed[which].second)[i], (up - down) / (2 * h));
    worst = std::max(worst, e);
    ++probes;
    c.expect(e < 1e-4, named[which].first + " rel err " + fmt("%.3g", e));
  }

  for (std::size_t target : {0u, 1u}) {
    const auto ga = cfr::attention_gradients(cache, p, target);
    for (int k = 0; k < 40; ++k) {
      const std::size_t b = rng() % cfg.num_blocks, i = rng() % ga[b].size();
      auto logit = [&](double delta) {
        cfr::ForwardHooks hooks;
        hooks.on_attention = [&](std::size_t blk, Tensor& a) {
          if (blk == b) a[i] += delta;
        };
        return cfr::forward(img, p, cfg, &hooks).logits[target];
      };
      const double e = rel(ga[b][i], (logit(h) - logit(-h)) / (2 * h));
      worst = std::max(worst, e);
      ++probes;
      c.expect(e < 1e-4, "attention block " + std::to_string(b) + " rel err " + fmt("%.3g", e));
    }
  }
  c.expect(probes >= 50, "too few probes");
  return c.done(std::to_string(probes) + " coordinates, max rel err " + fmt("%.3g", worst));
}

// ------------------------------------------------------------------ 5
Outcome metric_analytics() {
  Checker c;
  auto profile = [](std::vector<double> means) {
    cfr::ClassRelevanceProfile p;
    for (std::size_t k = 0; k < means.size(); ++k)
      p.classes[static_cast<cfr::LandClassId>(k)] = {means[k] * 4.0, 4, means[k]};
    return p;
  };
  c.expect(std::abs(cfr::relevance_entropy(profile({0.7}))) <= 1e-12, "one-hot entropy");
  c.expect(std::abs(cfr::relevance_entropy(profile({0.3, 0.3, 0.3, 0.3})) - std::log(4.0)) <= 1e-12,
           "uniform entropy");
  const std::vector<double> x = {1, 2, 3}, neg = {-1, -2, -3}, y = {10, 30, 20};
  c.expect(std::abs(cfr::pearson(x, x) - 1.0) <= 1e-12, "pearson identical");
  c.expect(std::abs(cfr::pearson(x, neg) + 1.0) <= 1e-12, "pearson negated");
  c.expect(std::abs(cfr::pearson(x, y) - 0.5) <= 1e-12, "pearson 3-point");

  const std::vector<std::size_t> l01 = {0, 1};
  c.expect(std::abs(cfr::ece(Tensor::matrix({{1, 0}, {0, 1}}), l01, 10)) <= 1e-12, "ece perfect");
  c.expect(std::abs(cfr::ece(Tensor::matrix({{0, 1}, {1, 0}}), l01, 10) - 1.0) <= 1e-12, "ece all wrong");
  const Tensor p4 = Tensor::matrix({{0.6, 0.4}, {0.6, 0.4}, {0.1, 0.9}, {0.1, 0.9}});
  c.expect(std::abs(cfr::ece(p4, std::vector<std::size_t>{0, 1, 1, 1}, 10) - 0.1) <= 1e-12, "ece hand case");
  return c.done("tolerance 1e-12");
}

// ------------------------------------------------------------------ 6
Outcome conservation() {
  Checker c;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> mant(0.0, 1.0);
  std::uniform_int_distribution<int> expo(-20, 20);
  for (int trial = 0; trial < 100; ++trial) {
    // Patch projection.
    const std::size_t p = 1 + rng() % 8, g = 1 + rng() % 6;
    Tensor patches({g * g});
    for (auto& v : patches.data()) v = std::ldexp(mant(rng), expo(rng));
    const cfr::RelevanceMap map = cfr::to_pixel_map(patches, g * p, p, false);
    cfr::ExactSum replicated;  // p² copies of every patch value, summed exactly
    for (double v : patches.data())
      for (std::size_t k = 0; k < p * p; ++k) replicated.add(v);
    c.expect(cfr::exact_sum(map.values.data()) == replicated.value(), "pixel map total");
    if ((p & (p - 1)) == 0) {
      c.expect(cfr::exact_sum(map.values.data()) == static_cast<double>(p * p) * cfr::exact_sum(patches.data()),
               "pixel map total (power-of-two scale)");
    }

    // Class aggregation on a random raster of the same size.
    cfr::LabelRaster raster{static_cast<std::uint32_t>(g * p), static_cast<std::uint32_t>(g * p), {}};
    raster.ids.resize(g * p * g * p);
    const std::size_t classes = 1 + rng() % 7;
    for (auto& id : raster.ids) id = static_cast<cfr::LandClassId>(rng() % classes);
    cfr::RelevanceMap noisy = map;
    for (auto& v : noisy.values.data()) v *= 1.0 + mant(rng);
    const auto agg = cfr::aggregate_by_class(noisy, raster);
    cfr::ExactSum classes_total;
    std::uint64_t pixels = 0;
    for (const auto& [id, a] : agg) {
      classes_total.add(a.relevance);
      pixels += a.pixels;
    }
    c.expect(classes_total.value() == cfr::exact_sum(noisy.values.data()), "class sums vs map total");
    c.expect(pixels == raster.ids.size(), "pixel count");
  }
  return c.done("100 instances, exact equality");
}

// ------------------------------------------------------------------ 7
Outcome synthetic_trend() {
  Checker c;
  const cfr::RunConfig config;  // the seeded defaults: 64 images of 32×32, 4 land classes
  const auto t0 = std::chrono::steady_clock::now();
  const cfr::CFRReport r = cfr::run_pipeline(config);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  c.expect(r.test_accuracy >= 0.95, "test accuracy " + fmt("%.3f", r.test_accuracy));
  c.expect(secs < 300.0, "runtime " + fmt("%.1f s", secs));

  const cfr::ThresholdResult* top = nullptr;
  const cfr::ThresholdResult* all = nullptr;
  for (const auto& t : r.thresholds) {
    if (t.threshold == 10.0) top = &t;
    if (t.threshold == 100.0) all = &t;
  }
  if (!top || !all) {
    c.expect(false, "missing 10% or 100% profile");
    return c.done("");
  }
  const auto planted = static_cast<cfr::LandClassId>(config.data.planted_class_id);
  cfr::LandClassId best = 0;
  double best_mean = -1.0;
  for (const auto& [id, cr] : top->profile.classes) {
    if (cr.mean_relevance > best_mean) {
      best_mean = cr.mean_relevance;
      best = id;
    }
  }
  const double planted_mean =
      top->profile.classes.count(planted) ? top->profile.classes.at(planted).mean_relevance : 0.0;
  c.expect(best == planted, "(a) top-10% leader is class " + std::to_string(best) + " (" + fmt("%.6g", best_mean) +
                                "), planted class " + std::to_string(planted) + " has " + fmt("%.6g", planted_mean));
  // Margin frozen at 0: the directional claim only.
  const bool have_entropy = top->entropy && all->entropy;
  c.expect(have_entropy && *top->entropy <= *all->entropy,
           "(b) entropy top-10% " + fmt("%.4f", top->entropy.value_or(NAN)) + " > all " +
               fmt("%.4f", all->entropy.value_or(NAN)));
  return c.done("accuracy " + fmt("%.3f", r.test_accuracy) + ", pipeline " + fmt("%.1f s", secs) +
                ", H(top10) " + fmt("%.4f", top->entropy.value_or(NAN)) + " vs H(all) " +
                fmt("%.4f", all->entropy.value_or(NAN)));
}

// ------------------------------------------------------------------ 8
std::vector<std::pair<std::string, std::string>> tree_bytes(const fs::path& root) {
  std::vector<std::pair<std::string, std::string>> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto bytes = cfr::read_bytes(e.path());
    files.emplace_back(fs::relative(e.path(), root).string(), std::string(bytes.begin(), bytes.end()));
  }
  std::sort(files.begin(), files.end());
  return files;
}

Outcome cli_determinism() {
  Checker c;
  const fs::path base = fs::temp_directory_path() / "cfr_acceptance_determinism";
  fs::remove_all(base);
  for (const char* run : {"a", "b"}) {
    const fs::path w = base / run;
    const std::vector<std::vector<std::string>> steps = {
        {"gen", "--out", (w / "data").string()},
        {"train", "--data", (w / "data").string(), "--out", (w / "model").string()},
        {"uncertainty", "--data", (w / "data").string(), "--model", (w / "model").string(), "--out",
         (w / "scores").string()},
        {"explain", "--data", (w / "data").string(), "--model", (w / "model").string(), "--out",
         (w / "maps").string(), "--threads", "4"},
        {"analyze", "--data", (w / "data").string(), "--scores", (w / "scores").string(), "--maps",
         (w / "maps").string(), "--out", (w / "report").string()},
    };
    for (const auto& args : steps) {
      std::ostringstream out, err;
      const int code = cfr::cli::dispatch(args, out, err);
      c.expect(code == 0, args[0] + " exited " + std::to_string(code) + ": " + err.str());
      if (code != 0) return c.done("");
    }
  }
  const auto a = tree_bytes(base / "a"), b = tree_bytes(base / "b");
  c.expect(a.size() == b.size() && !a.empty(), "different file sets");
  std::size_t tensor_files = 0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    c.expect(a[i].first == b[i].first, "file name " + a[i].first + " vs " + b[i].first);
    c.expect(a[i].second == b[i].second, a[i].first + " differs");
    tensor_files += a[i].first.ends_with(".cfrt");
  }
  const bool have_reports = std::any_of(a.begin(), a.end(), [](const auto& f) { return f.first == "report/report.csv"; }) &&
                            std::any_of(a.begin(), a.end(), [](const auto& f) { return f.first == "report/summary.json"; });
  c.expect(have_reports, "report files missing");
  fs::remove_all(base);
  return c.done(std::to_string(a.size()) + " files (" + std::to_string(tensor_files) + " tensor files) identical");
}

// ------------------------------------------------------------------ 9
Outcome structural() {
  Checker c;
  std::mt19937_64 rng(9);
  const std::vector<double> th = {10, 30, 50, 100};
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 300;
    std::vector<cfr::UncertaintyScore> scores(n);
    for (std::size_t i = 0; i < n; ++i) scores[i] = {i, static_cast<double>(rng() % 20) * 0.5, 0};
    std::shuffle(scores.begin(), scores.end(), rng);
    const auto ranked = cfr::rank_by_confidence(scores);
    for (std::size_t i = 1; i < n; ++i) {
      const bool ordered = ranked[i - 1].u < ranked[i].u ||
                           (ranked[i - 1].u == ranked[i].u && ranked[i - 1].sample_id < ranked[i].sample_id);
      c.expect(ordered, "ranking order");
    }
    std::shuffle(scores.begin(), scores.end(), rng);
    c.expect(cfr::rank_by_confidence(scores) == ranked, "ranking depends on input order");
    const auto parts = cfr::partition(ranked, th);
    for (std::size_t k = 0; k < parts.size(); ++k) {
      c.expect(parts[k].sample_ids.size() == cfr::subset_size(th[k], n), "subset size");
      if (k == 0) continue;
      const auto& small = parts[k - 1].sample_ids;
      const auto& big = parts[k].sample_ids;
      const std::set<std::size_t> bigset(big.begin(), big.end());
      c.expect(std::all_of(small.begin(), small.end(), [&](std::size_t id) { return bigset.count(id) > 0; }),
               "nesting");
    }
  }

  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::size_t> dims(1 + rng() % 4);
    for (auto& d : dims) d = 1 + rng() % 6;
    Tensor t(dims);
    std::uniform_real_distribution<double> u(-1e4, 1e4);
    for (auto& v : t.data()) v = static_cast<double>(static_cast<float>(u(rng)));
    const std::vector<cfr::NamedTensor> in = {{"t" + std::to_string(trial), t}};
    const auto bytes = cfr::encode_tensors(in);
    const auto out = cfr::decode_tensors(bytes);
    c.expect(out.size() == 1 && out[0].name == in[0].name && out[0].tensor == t, "tensor round trip");
    c.expect(cfr::encode_tensors(out) == bytes, "re-encoding differs");
  }
  return c.done("1000 score sets, 500 tensors");
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "fusion unit fidelity", 1.0, fusion_unit},
      {2, "rollout chain vs naive product", 5.0, rollout_oracle},
      {3, "mahalanobis vs explicit inverse", 5.0, mahalanobis_oracle},
      {4, "gradient fidelity", 60.0, gradient_fidelity},
      {5, "metric analytics", 1.0, metric_analytics},
      {6, "conservation", 5.0, conservation},
      {7, "end-to-end synthetic trend", 300.0, synthetic_trend},
      {8, "CLI determinism", 600.0, cli_determinism},
      {9, "structural invariants", 30.0, structural},
  };

  std::set<int> selected, known_failures;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--known-failure" && i + 1 < argc) {
      known_failures.insert(std::stoi(argv[++i]));
    } else {
      selected.insert(std::stoi(arg));
    }
  }

  int failed = 0, excused = 0;
  for (const auto& crit : all) {
    if (!selected.empty() && !selected.count(crit.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = crit.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > crit.budget_seconds) {
      o.pass = false;
      o.detail += " | over the " + fmt("%.0f s", crit.budget_seconds) + " budget";
    }
    std::printf("criterion %d %-34s %s  (%.2f s)  %s\n", crit.id, crit.name, o.pass ? "PASS" : "FAIL", secs,
                o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) (known_failures.count(crit.id) ? excused : failed) += 1;
  }
  if (excused > 0) std::printf("%d known failure(s) reported above and excluded from the exit status\n", excused);
  return failed == 0 ? 0 : 1;
}
