#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "titan/training.hpp"

using namespace titan;
namespace fs = std::filesystem;
using train::Trainer;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("titan_train_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static inline int counter = 0;
};

nn::GeneratorConfig tiny_gen() {
  nn::GeneratorConfig g;
  g.in_channels = 9;
  g.num_classes = 4;
  g.encoder_depth = 2;
  g.base_width = 4;
  g.head_width = 6;
  g.input_width = 64;
  g.input_height = 16;
  g.output_width = 128;
  g.output_height = 32;
  g.dropout_p = 0.2;
  return g;
}

nn::CriticConfig tiny_critic() {
  nn::CriticConfig c;
  c.num_classes = 4;
  c.base_width = 4;
  c.levels = 2;
  c.input_width = 128;
  c.input_height = 32;
  return c;
}

train::TrainConfig tiny_train() {
  train::TrainConfig t;
  t.batch_size = 3;
  t.critic_steps_per_gen = 1;
  t.max_epochs = 2;
  t.seed = 7;
  return t;
}

train::PipelineConfig toy_pipe() {
  train::PipelineConfig p;
  p.proj.width = 256;
  p.proj.height = 16;
  p.proj.fov_up = 3.0;
  p.proj.fov_down = -25.0;
  p.cam_hfov_deg = 90.0;
  p.num_classes = 4;
  p.cam_width = 128;
  p.cam_height = 32;
  p.range_scale = 80.0;
  p.swd.full_res = 32;
  p.swd.min_res = 16;
  p.swd.patch = 7;
  p.swd.patches_per_level = 16;
  p.swd.num_projections = 32;
  return p;
}

std::vector<synth::PairedSample> make_dataset(int n, std::uint64_t seed0) {
  std::vector<synth::PairedSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    out.push_back(synth::generate_scene(synth::random_scene(seed0 + static_cast<std::uint64_t>(i), 4)));
  return out;
}

template <typename S>
std::vector<train::Prepared<S>> prepare_all(const std::vector<synth::PairedSample>& set,
                                            const train::PipelineConfig& pc) {
  std::vector<train::Prepared<S>> out;
  for (const auto& s : set) out.push_back(train::prepare_sample<S>(s, pc));
  return out;
}

/// A hand-built 4-point sample with asymmetric camera maps, for augmentation.
synth::PairedSample micro_sample() {
  synth::PairedSample s;
  s.cloud.pts.resize(4, 4);
  s.cloud.pts << 5.0f, 1.0f, 0.2f, 0.5f,   //
      5.0f, -1.0f, 0.1f, 0.3f,             //
      6.0f, 0.5f, 1.0f, 0.2f,              //
      4.0f, -0.5f, -1.0f, 0.9f;
  s.lidar_labels = {1, 2, 3, 1};
  s.cam_segments.resize(2, 2);
  s.cam_segments << 0, 1, 2, 3;
  s.cam_depth.resize(2, 2);
  s.cam_depth << 0.0f, 1.0f, 2.0f, 4.0f;
  return s;
}

template <typename S>
std::vector<ArrayX<S>> snapshot_params(std::vector<nn::ParamRef<S>> refs) {
  std::vector<ArrayX<S>> out;
  for (auto& r : refs) out.push_back(r.tensor->value());
  return out;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("one adaptive-moment update matches the hand-computed formula") {
  using T = ad::Tensor<double>;
  T p = T::leaf((ArrayX<double>(3) << 1.0, -2.0, 3.0).finished(), {3});
  const ArrayX<double> target = (ArrayX<double>(3) << 0.5, 0.5, 0.5).finished();
  std::vector<nn::ParamRef<double>> refs{{"p", &p}};

  const double lr = 0.1, b1 = 0.5, b2 = 0.999, eps = 1e-8;
  train::Adam<double> opt(lr, b1, b2, eps, 1);

  ArrayX<double> m = ArrayX<double>::Zero(3), v = ArrayX<double>::Zero(3);
  ArrayX<double> hand = p.value();
  for (int t = 1; t <= 3; ++t) {
    // Quadratic objective 0.5 * sum((p - target)^2) => gradient p - target.
    T q = T::constant(ArrayX<double>(target), {3});
    T loss = ad::scale(ad::sum_all(ad::square(ad::sub(p, q))), 0.5);
    auto g = ad::grad(loss, {p});

    const ArrayX<double> gv = hand - target;
    m = b1 * m + (1 - b1) * gv;
    v = b2 * v + (1 - b2) * gv.square();
    const double c1 = 1 - std::pow(b1, t), c2 = 1 - std::pow(b2, t);
    hand -= lr * (m / c1) / ((v / c2).sqrt() + eps);

    opt.step(refs, g);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(p.value()[i] - hand[i]) < 1e-10);
  }
  CHECK(opt.t() == 3);
}

TEST_CASE("pipeline crop arithmetic and preparation shapes") {
  const train::PipelineConfig pc = toy_pipe();
  CHECK(pc.crop_width() == 64);  // 90 of 360 degrees over 256 columns

  const auto data = make_dataset(1, 42);
  const auto p = train::prepare_sample<float>(data[0], pc);
  CHECK(p.input.shape() == std::vector<int>{9, 16, 64});
  CHECK(p.condition.shape() == std::vector<int>{4, 32, 128});
  CHECK(p.seg_onehot.shape() == std::vector<int>{4, 32, 128});
  CHECK(p.depth_target.shape() == std::vector<int>{1, 32, 128});
  CHECK(p.seg_labels.rows() == 32);

  // Normalized depth peaks at exactly 1 and vanishes on void pixels.
  CHECK(p.depth_target.value().maxCoeff() == 1.0f);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 128; ++x)
      if (data[0].cam_depth(y, x) == 0.0f) CHECK(p.guide(y, x) == 0.0f);

  // The one-hot input block sums to the projection mask per pixel, so cells
  // without a return carry no class evidence.
  const auto& v = p.input.value();
  const std::int64_t plane = 16 * 64;
  int on = 0, off = 0;
  for (std::int64_t px = 0; px < plane; ++px) {
    float class_sum = 0, geom = 0;
    for (int c = 5; c < 9; ++c) class_sum += v[c * plane + px];
    for (int c = 0; c < 4; ++c) geom += std::abs(v[c * plane + px]);
    if (class_sum == 0.0f) {
      ++off;
      CHECK(geom == 0.0f);
    } else {
      ++on;
      CHECK(class_sum == 1.0f);
    }
  }
  CHECK(on > 0);

  // The condition stays one-hot after resampling to the camera grid.
  const auto& cv = p.condition.value();
  const std::int64_t cplane = 32 * 128;
  for (std::int64_t px = 0; px < cplane; ++px) {
    float s = 0;
    for (int c = 0; c < 4; ++c) s += cv[c * cplane + px];
    CHECK((s == 0.0f || s == 1.0f));
  }

  synth::PairedSample bad = data[0];
  bad.cam_segments(0, 0) = 9;
  CHECK_THROWS_AS(train::prepare_sample<float>(bad, pc), InvalidInput);
}

TEST_CASE("augmentation: identity, paired mirroring, and paired dropout") {
  const synth::PairedSample s = micro_sample();

  train::TrainConfig off;
  off.flip_prob = 0;
  off.drop_prob = 0;
  Rng r0(1);
  const auto same = train::augment(s, off, r0);
  CHECK((same.cloud.pts == s.cloud.pts).all());
  CHECK(same.lidar_labels == s.lidar_labels);
  CHECK((same.cam_segments == s.cam_segments).all());
  CHECK((same.cam_depth == s.cam_depth).all());

  train::TrainConfig flip;
  flip.flip_prob = 1;
  flip.drop_prob = 0;
  Rng r1(1);
  const auto flipped = train::augment(s, flip, r1);
  CHECK((flipped.cloud.pts.col(1) == -s.cloud.pts.col(1)).all());
  CHECK((flipped.cloud.pts.col(0) == s.cloud.pts.col(0)).all());
  ArrayXXi mirrored(2, 2);
  mirrored << 1, 0, 3, 2;
  CHECK((flipped.cam_segments == mirrored).all());
  CHECK(flipped.cam_depth(0, 0) == 1.0f);
  CHECK(flipped.cam_depth(1, 1) == 2.0f);
  Rng r2(2);
  const auto twice = train::augment(train::augment(s, flip, r1), flip, r2);
  CHECK((twice.cam_segments == s.cam_segments).all());  // mirroring is an involution

  // Paired dropout keeps labels aligned and matches the unpaired subsample.
  PointCloud<float> big;
  big.pts.resize(500, 4);
  std::vector<std::uint32_t> labels(500);
  Rng fill(3);
  for (int i = 0; i < 500; ++i) {
    for (int c = 0; c < 4; ++c) big.pts(i, c) = static_cast<float>(fill.uniform(-1, 1));
    labels[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(i);
  }
  const auto [dropped, kept_labels] = train::drop_points_paired(big, labels, 0.5, 99);
  const auto plain = drop_points(big, 0.5, 99);
  CHECK(dropped.size() == plain.size());
  CHECK((dropped.pts == plain.pts).all());
  for (std::int64_t j = 0; j < dropped.size(); ++j)
    CHECK((big.pts.row(kept_labels[static_cast<std::size_t>(j)]) == dropped.pts.row(j)).all());

  const auto [none, none_labels] = train::drop_points_paired(big, labels, 1.0, 99);
  CHECK(none.size() == 0);
  CHECK(none_labels.empty());
}

TEST_CASE("the flip gate is a fair coin") {
  const synth::PairedSample s = micro_sample();
  train::TrainConfig cfg;
  cfg.flip_prob = 0.5;
  cfg.drop_prob = 0;
  Rng rng(2024);
  int flips = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto a = train::augment(s, cfg, rng);
    if ((a.cam_segments != s.cam_segments).any()) ++flips;
  }
  CHECK(flips >= 4700);
  CHECK(flips <= 5300);
}

TEST_CASE("zero learning rate leaves every parameter untouched but reports losses") {
  auto tcfg = tiny_train();
  tcfg.learning_rate = 0.0;
  Trainer<float> tr(tiny_gen(), tiny_critic(), tcfg, toy_pipe());
  const auto data = make_dataset(3, 50);
  const auto batch = prepare_all<float>(data, toy_pipe());

  const auto g_before = snapshot_params<float>(tr.generator().params());
  const auto d_before = snapshot_params<float>(tr.critic().params());
  Rng rng(5);
  const LossReport<float> rep = tr.train_step(batch, rng);
  const auto g_after = snapshot_params<float>(tr.generator().params());
  const auto d_after = snapshot_params<float>(tr.critic().params());

  for (std::size_t i = 0; i < g_before.size(); ++i) CHECK((g_before[i] == g_after[i]).all());
  for (std::size_t i = 0; i < d_before.size(); ++i) CHECK((d_before[i] == d_after[i]).all());
  CHECK(std::isfinite(rep.grand_total));
  CHECK(rep.wce > 0);
  CHECK(rep.ls > 0);
  CHECK(rep.seg_total == rep.wce + rep.ls);
}

TEST_CASE("identical seed, config, and data give identical loss traces") {
  const auto data = make_dataset(3, 60);
  const auto batch = prepare_all<float>(data, toy_pipe());
  LossReport<float> reps[2][3];
  for (int run = 0; run < 2; ++run) {
    Trainer<float> tr(tiny_gen(), tiny_critic(), tiny_train(), toy_pipe());
    Rng rng = Rng(7).stream(3);
    for (int k = 0; k < 3; ++k) reps[run][k] = tr.train_step(batch, rng);
  }
  for (int k = 0; k < 3; ++k) {
    CHECK(reps[0][k].wce == reps[1][k].wce);
    CHECK(reps[0][k].ls == reps[1][k].ls);
    CHECK(reps[0][k].ids == reps[1][k].ids);
    CHECK(reps[0][k].mae == reps[1][k].mae);
    CHECK(reps[0][k].ssim_loss == reps[1][k].ssim_loss);
    CHECK(reps[0][k].d_adv == reps[1][k].d_adv);
    CHECK(reps[0][k].g_adv == reps[1][k].g_adv);
    CHECK(reps[0][k].grand_total == reps[1][k].grand_total);
  }
}

TEST_CASE("alternation counters match the configuration exactly") {
  auto tcfg = tiny_train();
  tcfg.critic_steps_per_gen = 3;
  Trainer<float> tr(tiny_gen(), tiny_critic(), tcfg, toy_pipe());
  const auto batch = prepare_all<float>(make_dataset(3, 70), toy_pipe());
  Rng rng(6);
  tr.train_step(batch, rng);
  tr.train_step(batch, rng);
  CHECK(tr.critic_updates() == 6);
  CHECK(tr.gen_updates() == 2);
  CHECK(tr.step() == 2);
}

TEST_CASE("the gradient penalty engages for a randomly initialized critic") {
  Rng init(9);
  nn::Critic<float> critic(tiny_critic(), init);
  auto fn = [&](const ad::Tensor<float>& a, const ad::Tensor<float>& b,
                const ad::Tensor<float>& c) { return critic(a, b, c); };
  const auto batch = prepare_all<float>(make_dataset(2, 80), toy_pipe());
  std::vector<CriticPair<float>> real, fake;
  std::vector<ad::Tensor<float>> conds;
  for (const auto& p : batch) {
    real.push_back({p.seg_onehot, p.depth_target});
    fake.push_back({p.condition, p.depth_target});  // any distinct pair will do
    conds.push_back(p.condition);
  }
  Rng ra(11), rb(11);
  const float with_pen = wgan_gp_d_loss(fn, real, fake, conds, ra, 10.0f).item();
  const float without = wgan_gp_d_loss(fn, real, fake, conds, rb, 0.0f).item();
  CHECK(with_pen - without > 1e-4f);  // lambda * mean (||grad|| - 1)^2 > 0
}

TEST_CASE("max_epochs 0 writes the initial checkpoint and nothing else") {
  TempDir td;
  auto tcfg = tiny_train();
  tcfg.max_epochs = 0;
  Trainer<float> tr(tiny_gen(), tiny_critic(), tcfg, toy_pipe());
  const auto before = snapshot_params<float>(tr.generator().params());
  const auto data = make_dataset(3, 90);
  tr.fit(data, data, td.path);

  CHECK(fs::exists(td.path / "ckpt_e0.tck"));
  CHECK(!fs::exists(td.path / "ckpt_e1.tck"));
  std::ifstream csv(td.path / "log.csv");
  std::string line;
  REQUIRE(std::getline(csv, line));
  CHECK(line == train::kCsvHeader);
  CHECK(!std::getline(csv, line));  // header only, no data rows

  const auto after = snapshot_params<float>(tr.generator().params());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK((before[i] == after[i]).all());
  CHECK(tr.gen_updates() == 0);
  CHECK(tr.critic_updates() == 0);
}

TEST_CASE("training a fixed batch drives the segmentation objective down") {
  auto tcfg = tiny_train();
  tcfg.seed = 5;
  Trainer<float> tr(tiny_gen(), tiny_critic(), tcfg, toy_pipe());
  const auto batch = prepare_all<float>(make_dataset(3, 100), toy_pipe());
  Rng rng = Rng(5).stream(3);
  double head = 0, tail = 0;
  for (int k = 0; k < 50; ++k) {
    const auto rep = tr.train_step(batch, rng);
    if (k < 5) head += rep.seg_total;
    if (k >= 45) tail += rep.seg_total;
  }
  CHECK(tail / 5 < head / 5);
}

TEST_CASE("interrupted and uninterrupted runs produce identical logs and weights") {
  const auto data = make_dataset(9, 110);
  const auto val = make_dataset(3, 120);
  auto read_file = [](const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };

  TempDir da;
  auto tcfg = tiny_train();
  tcfg.max_epochs = 2;
  Trainer<float> a(tiny_gen(), tiny_critic(), tcfg, toy_pipe());
  a.fit(data, val, da.path);

  TempDir db;
  auto tcfg1 = tcfg;
  tcfg1.max_epochs = 1;
  Trainer<float> b1(tiny_gen(), tiny_critic(), tcfg1, toy_pipe());
  b1.fit(data, val, db.path);
  Trainer<float> b2(tiny_gen(), tiny_critic(), tcfg, toy_pipe());
  b2.load_checkpoint(ck::load(db.path / "ckpt_e1.tck"));
  CHECK(b2.epoch() == 1);
  b2.fit(data, val, db.path);

  CHECK(read_file(da.path / "log.csv") == read_file(db.path / "log.csv"));

  const auto ca = ck::load(da.path / "ckpt_e2.tck");
  const auto cb = ck::load(db.path / "ckpt_e2.tck");
  CHECK(ca.meta == cb.meta);
  REQUIRE(ca.tensors.size() == cb.tensors.size());
  for (const auto& [name, blob] : ca.tensors) {
    REQUIRE(cb.tensors.count(name) == 1);
    CHECK((cb.tensors.at(name).data == blob.data).all());
  }
}

TEST_CASE("configuration errors are rejected") {
  train::TrainConfig t;
  t.learning_rate = -1;
  CHECK_THROWS_AS(t.validate(), InvalidInput);
  t = {};
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(), InvalidInput);
  t = {};
  t.dropout_p = 1.0;
  CHECK_THROWS_AS(t.validate(), InvalidInput);
  t = {};
  t.flip_prob = 1.5;
  CHECK_THROWS_AS(t.validate(), InvalidInput);

  train::PipelineConfig p = toy_pipe();
  p.cam_hfov_deg = 0;
  CHECK_THROWS_AS(p.validate(), InvalidInput);
  p = toy_pipe();
  p.range_scale = 0;
  CHECK_THROWS_AS(p.validate(), InvalidInput);

  // Cross-checks between the generator and the pipeline.
  auto g = tiny_gen();
  g.input_width = 32;
  CHECK_THROWS_AS(Trainer<float>(g, tiny_critic(), tiny_train(), toy_pipe()), InvalidInput);
  auto c = tiny_critic();
  c.input_width = 64;
  CHECK_THROWS_AS(Trainer<float>(tiny_gen(), c, tiny_train(), toy_pipe()), InvalidInput);
}

}  // TEST_SUITE
