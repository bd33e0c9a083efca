// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Criterion 5 trains ten small networks and dominates the runtime.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "degenerate.hpp"
#include "ialseg/commands.hpp"
#include "ialseg/gradcheck.hpp"
#include "ialseg/ialseg.hpp"
#include "oracles.hpp"

using namespace ialseg;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int id, const char* title, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("%s criterion %d (%s): %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str(),
              seconds_since(t0));
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ImportanceHierarchy one_class_per_group(int g) {
  std::vector<ClassDef> classes;
  std::vector<std::vector<int>> groups;
  for (int i = 0; i < g; ++i) {
    classes.push_back({i, "c" + std::to_string(i)});
    groups.push_back({i});
  }
  return ImportanceHierarchy(classes, groups);
}

Tensor<double> one_hot(const LabelMap& lab, std::size_t c) {
  Tensor<double> p(Shape{lab.batch, lab.height, lab.width, c}, 0.0);
  for (std::size_t i = 0; i < lab.pixels(); ++i) p[i * c + static_cast<std::size_t>(lab.ids[i])] = 1.0;
  return p;
}

// Probability tensor with true-class mass pc and the remainder spread evenly.
Tensor<double> prob_with_true(const LabelMap& lab, std::size_t c, double pc) {
  Tensor<double> p(Shape{lab.batch, lab.height, lab.width, c});
  for (std::size_t i = 0; i < lab.pixels(); ++i)
    for (std::size_t k = 0; k < c; ++k)
      p[i * c + k] = k == static_cast<std::size_t>(lab.ids[i]) ? pc : (1 - pc) / static_cast<double>(c - 1);
  return p;
}

Outcome gradients() {
  const auto t0 = Clock::now();
  const auto results = run_grad_check_suite(1, 100);
  const double secs = seconds_since(t0);
  double worst = 0;
  std::string worst_name;
  for (const auto& r : results)
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
  const bool ok = worst < kGradTolerance && secs < 120;
  return {ok, fmt("%zu checks, worst %.2e (%s), %.1fs", results.size(), worst, worst_name.c_str(), secs)};
}

Outcome oracle_equivalence() {
  const auto t0 = Clock::now();
  gradcheck::Rng rng(2);
  double worst = 0;
  const int trials = 1000;
  for (int i = 0; i < trials; ++i) {
    auto inst = gradcheck::random_loss_instance(rng, 16, 8, 3);
    const LossParams params{0.5 + 0.25 * (i % 5), 0.1 + 0.2 * (i % 4)};
    const auto prob = softmax(inst.logits);
    const auto b = ial_loss(prob, inst.labels, inst.hierarchy, inst.weights, params);
    const auto o =
        oracle::naive_loss_oracle(prob, inst.labels, inst.hierarchy, inst.weights.omega, params.alpha, params.lambda);
    worst = std::max(worst, oracle::rel_diff(b.total, o.total));
    for (std::size_t g = 0; g < o.I.size(); ++g) worst = std::max(worst, oracle::rel_diff(b.per_group[g], o.I[g]));
    for (std::size_t t = 0; t < o.f.size(); ++t)
      worst = std::max(worst, oracle::rel_diff(b.dynamic_weights[t], o.f[t]));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-10 && secs < 60, fmt("%d instances, worst relative %.2e, %.1fs", trials, worst, secs)};
}

Outcome degenerate_reduction() {
  bool ok = true;
  gradcheck::Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    auto inst = gradcheck::random_loss_instance(rng, 12, 8, 1);
    const auto prob = softmax(inst.logits);
    const auto b = ial_loss(prob, inst.labels, inst.hierarchy, inst.weights);
    const auto ce = weighted_ce(prob, inst.labels, inst.weights, group_rank_map(inst.hierarchy, inst.labels), 1);
    ok = ok && b.total == ce.total;
  }
  const bool single_ok = ok;

  // One-hot on every class: the loss vanishes.
  const auto h = camvid_hierarchy();
  const std::vector<double> uniform(11, 1.0 / 11);
  LabelMap mixed(1, 3, 4, 0);
  for (std::size_t i = 0; i < mixed.pixels(); ++i) mixed.ids[i] = static_cast<int>(i % 11);
  const auto bm = ial_loss(one_hot(mixed, 11), mixed, h, enet_weights(uniform));
  bool total_ok = bm.total == 0.0;

  // f_t = 0 needs every scored pixel to satisfy its matrix; only top-group maps do.
  LabelMap top(1, 2, 3, std::vector<int>{6, 8, 9, 10, 6, 9});
  const auto bt = ial_loss(one_hot(top, 11), top, h, enet_weights(uniform));
  total_ok = total_ok && bt.total == 0.0;
  bool f_ok = true;
  for (double f : bt.dynamic_weights) f_ok = f_ok && f == 0.0;

  std::string mixed_f;
  for (double f : bm.dynamic_weights) mixed_f += fmt(" %.4f", f);
  return {single_ok && total_ok && f_ok,
          fmt("G=1 equals weighted CE exactly: %s; one-hot total 0: %s; f = 0 on top-group maps: %s "
              "(mixed-map f:%s)",
              single_ok ? "yes" : "no", total_ok ? "yes" : "no", f_ok ? "yes" : "no", mixed_f.c_str())};
}

Outcome hand_values() {
  const std::vector<double> freqs{0.0, 1.0};
  const auto w = enet_weights(freqs, 1.02);
  const auto h2 = one_class_per_group(2);
  const auto m1 = build_matrix_specs(h2)[0];
  LabelMap one(1, 1, 1, 1), zero(1, 1, 1, 0);
  const double f_one =
      dynamic_weight(prob_with_true(one, 2, 0.0), one, rasterize_matrix(m1, h2, one), group_rank_map(h2, one), 1, 0.5);
  const double f_zero = dynamic_weight(prob_with_true(zero, 2, 1.0), zero, rasterize_matrix(m1, h2, zero),
                                       group_rank_map(h2, zero), 1, 0.5);
  const std::vector<double> f{1.5, 0.5}, I{0.1, 0.2, 0.3};
  const double total = compose_total(I, compose_coefficients(f, 1.0));
  const bool ok = std::abs(w.omega[0] - 50.4975) <= 1e-3 && std::abs(w.omega[1] - 1.4225) <= 1e-3 &&
                  std::abs(f_one - 1.5) <= 1e-12 && std::abs(f_zero - 0.5) <= 1e-12 &&
                  std::abs(total - 1.725) <= 1e-12;
  return {ok, fmt("omega %.4f %.4f, f %.15g %.15g, composed %.15g", w.omega[0], w.omega[1], f_one, f_zero, total)};
}

Outcome directional() {
  const auto t0 = Clock::now();
  const GenDataConfig gen;
  const Dataset train_set = generate_dataset(gen.scene, gen.train_count, 0);
  const Dataset eval_set = generate_dataset(gen.scene, gen.eval_count, gen.eval_offset);
  const std::size_t pairs = 5;
  int recall_wins = 0;
  double g1p_ce = 0, g1p_ial = 0;
  for (std::size_t s = 0; s < pairs; ++s) {
    double g3r[2], g1p[2];
    for (int k = 0; k < 2; ++k) {
      RunConfig rc;
      rc.loss = k == 0 ? LossKind::WeightedCe : LossKind::Ial;
      rc.seed = 1 + s;
      ErfPspNet<float> net(rc.net, *rc.seed);
      train<float>(net, train_set, rc);
      const auto r = group_report(evaluate<float>(net, eval_set), eval_set.hierarchy);
      g3r[k] = r.per_group[2].recall.value_or(0);
      g1p[k] = r.per_group[0].precision.value_or(0);
    }
    if (g3r[1] > g3r[0]) ++recall_wins;
    g1p_ce += g1p[0] / pairs;
    g1p_ial += g1p[1] / pairs;
    std::printf("  seed %zu: G3 recall ce %.4f ial %.4f | G1 precision ce %.4f ial %.4f\n", 1 + s, g3r[0], g3r[1],
                g1p[0], g1p[1]);
    std::fflush(stdout);
  }
  const double secs = seconds_since(t0);
  const bool ok = recall_wins >= 4 && g1p_ial >= g1p_ce - 0.01 && secs < 1800;
  return {ok, fmt("G3 recall higher with IAL in %d/%zu pairs; mean G1 precision ce %.4f ial %.4f; %.0fs", recall_wins,
                  pairs, g1p_ce, g1p_ial, secs)};
}

Outcome architecture() {
  const auto t0 = Clock::now();
  gradcheck::Rng rng(6);
  NetworkConfig c;
  ErfPspNet<float> erf(c, 6);
  const auto x = gradcheck::random_tensor(Shape{2, c.height, c.width, 3}, rng, 0, 1).cast<float>();
  const bool erf_ok = erf.forward(x).shape() == Shape{2, c.height, c.width, c.num_classes};

  c.variant = NetVariant::BiErf;
  BiErfPspNet<float> bi(c, 6);
  const auto xl = gradcheck::random_tensor(Shape{1, c.large_height, c.large_width, 3}, rng, 0, 1);
  const bool bi_ok = bi.forward(xl.cast<float>()).shape() == Shape{1, c.large_height, c.large_width, c.num_classes};

  BiErfPspNet<double> deg(c, 7);
  ialseg::testing::neutralize_spatial_path(deg);
  const auto y = deg.forward(xl);
  const auto ref = ialseg::testing::context_only_prediction(deg, xl);
  double worst = 0;
  for (std::size_t i = 0; i < y.size(); ++i) worst = std::max(worst, std::abs(y[i] - ref[i]));
  const double secs = seconds_since(t0);
  return {erf_ok && bi_ok && worst < 1e-5 && secs < 60,
          fmt("shapes erf %s bierf %s, degenerate max diff %.2e, %.1fs", erf_ok ? "ok" : "bad", bi_ok ? "ok" : "bad",
              worst, secs)};
}

Outcome determinism(const fs::path& work) {
  GenDataConfig gen;
  gen.train_count = 24;
  gen.eval_count = 4;
  gen.scene.seed = 11;
  gen.out = (work / "data").string();
  std::ostringstream sink;
  cmd_gen_data(gen, sink);
  for (const char* name : {"a", "b"}) {
    RunConfig rc;
    rc.dataset = (work / "data" / "train").string();
    rc.optimizer.epochs = 3;
    rc.optimizer.decay_every = 2;
    rc.seed = 5;
    rc.out = (work / name).string();
    cmd_train(rc, sink);
  }
  const bool csv = slurp(work / "a" / "loss_curve.csv") == slurp(work / "b" / "loss_curve.csv");
  const bool ckpt = slurp(work / "a" / "final.ckpt") == slurp(work / "b" / "final.ckpt");
  return {csv && ckpt, fmt("loss curves identical: %s; final checkpoints identical: %s", csv ? "yes" : "no",
                           ckpt ? "yes" : "no")};
}

Outcome round_trips() {
  std::mt19937_64 rng(8);
  bool pgm = true, ppm = true, ckpt = true, hier = true;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = 1 + rng() % 24, w = 1 + rng() % 24;
    LabelMap lab(1, h, w, 0);
    for (auto& id : lab.ids) id = static_cast<int>(rng() % 256);
    const std::string pg = encode_pgm(lab);
    pgm = pgm && decode_pgm(pg) == lab && encode_pgm(decode_pgm(pg)) == pg;

    auto img = Tensor<float>::nhwc(1, h, w, 3);
    for (auto& v : img.vec()) v = static_cast<float>(rng() % 256) / 255.0f;
    const std::string pp = encode_ppm(img);
    ppm = ppm && decode_ppm(pp) == img && encode_ppm(decode_ppm(pp)) == pp;

    std::map<std::string, Tensor<float>> tensors;
    for (int k = 0, n = 1 + static_cast<int>(rng() % 5); k < n; ++k) {
      Tensor<float> t(Shape{1 + rng() % 5, 1 + rng() % 5});
      for (auto& v : t.vec()) {
        const auto bits = static_cast<std::uint32_t>(rng());
        std::memcpy(&v, &bits, sizeof v);
      }
      tensors.emplace("p" + std::to_string(k), std::move(t));
    }
    std::stringstream ss;
    write_checkpoint(ss, tensors);
    const std::string bytes = ss.str();
    const auto back = read_checkpoint<float>(ss);
    std::stringstream again;
    write_checkpoint(again, back);
    ckpt = ckpt && again.str() == bytes;
    for (const auto& [name, t] : tensors)
      ckpt = ckpt && std::memcmp(back.at(name).data(), t.data(), t.size() * sizeof(float)) == 0;

    const auto hr = gradcheck::random_hierarchy(3 + rng() % 20, 1 + rng() % 4, rng);
    hier = hier && parse_hierarchy(serialize_hierarchy(hr)) == hr;
  }
  for (const auto& h : {camvid_hierarchy(), cityscapes_hierarchy(), synthetic_hierarchy()})
    hier = hier && parse_hierarchy(serialize_hierarchy(h)) == h;
  return {pgm && ppm && ckpt && hier, fmt("pgm %s, ppm %s, checkpoint %s, hierarchy json %s", pgm ? "ok" : "bad",
                                          ppm ? "ok" : "bad", ckpt ? "ok" : "bad", hier ? "ok" : "bad")};
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / ("ialseg_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(work);
  fs::create_directories(work);

  report(1, "gradient checks", gradients);
  report(2, "oracle equivalence", oracle_equivalence);
  report(3, "degenerate reduction", degenerate_reduction);
  report(4, "hand-checked values", hand_values);
  report(5, "IAL vs weighted CE on synthetic scenes", directional);
  report(6, "architecture contracts", architecture);
  report(7, "determinism", [&] { return determinism(work); });
  report(8, "I/O round trips", round_trips);

  fs::remove_all(work);
  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
