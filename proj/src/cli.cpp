#include "titan/cli.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "titan/config.hpp"
#include "titan/io/kitti.hpp"
#include "titan/io/png.hpp"
#include "titan/metrics.hpp"
#include "titan/network.hpp"
#include "titan/synthdata.hpp"
#include "titan/training.hpp"

namespace titan::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kUsage =
    R"(usage: titan <command> [options]

commands:
  synth   render a synthetic paired dataset with a KITTI-style layout
  train   fit the translation model on a dataset split
  eval    score a checkpoint on a dataset split
  infer   translate one point cloud with a trained checkpoint

common options:
  --config PATH        JSON config file (built-in defaults when omitted)
  --<section.key> V    override any config value, e.g. --train.batch_size 4

synth:  [--out DIR]  [--count N]  [--seed N]         (out defaults to data.root)
train:  [--resume CKPT]  [--max-epochs N]  [--seed N]
eval:   --checkpoint CKPT | --gt-self  [--split NAME]  [--out DIR]
infer:  --checkpoint CKPT  --cloud FILE.bin  --out DIR
        [--labels FILE.label]  [--panorama]

The dataset root comes from data.root, which defaults to $TITAN_DATA_DIR.
exit codes: 0 success, 1 training divergence, 2 invalid input or paths
)";

struct Args {
  std::string verb;
  std::string config_path;
  std::string out;
  std::string checkpoint;
  std::string split;
  std::string cloud;
  std::string labels;
  std::string resume;
  bool panorama = false;
  bool gt_self = false;
  bool help = false;
  std::vector<std::pair<std::string, std::string>> overrides;  // dotted key -> raw value
};

Args parse_args(const std::vector<std::string>& argv) {
  Args a;
  if (argv.empty()) throw InvalidInput("missing command");
  std::size_t i = 0;
  if (argv[0] == "--help" || argv[0] == "-h") {
    a.help = true;
    return a;
  }
  a.verb = argv[i++];
  if (a.verb != "synth" && a.verb != "train" && a.verb != "eval" && a.verb != "infer")
    throw InvalidInput("unknown command '" + a.verb + "'");

  const auto need_value = [&](const std::string& flag) -> const std::string& {
    if (i >= argv.size()) throw InvalidInput(flag + " expects a value");
    return argv[i++];
  };
  while (i < argv.size()) {
    const std::string& arg = argv[i++];
    if (arg == "--help" || arg == "-h") {
      a.help = true;
    } else if (arg == "--config") {
      a.config_path = need_value(arg);
    } else if (arg == "--out") {
      a.out = need_value(arg);
    } else if (arg == "--checkpoint") {
      a.checkpoint = need_value(arg);
    } else if (arg == "--split") {
      a.split = need_value(arg);
    } else if (arg == "--cloud") {
      a.cloud = need_value(arg);
    } else if (arg == "--labels") {
      a.labels = need_value(arg);
    } else if (arg == "--resume") {
      a.resume = need_value(arg);
    } else if (arg == "--panorama") {
      a.panorama = true;
    } else if (arg == "--gt-self") {
      a.gt_self = true;
    } else if (arg == "--count") {
      a.overrides.emplace_back("synth.count", need_value(arg));
    } else if (arg == "--max-epochs") {
      a.overrides.emplace_back("train.max_epochs", need_value(arg));
    } else if (arg == "--seed") {
      const std::string& v = need_value(arg);
      a.overrides.emplace_back(a.verb == "synth" ? "synth.seed" : "train.seed", v);
    } else if (arg.rfind("--", 0) == 0 && arg.find('.') != std::string::npos) {
      a.overrides.emplace_back(arg.substr(2), need_value(arg));
    } else {
      throw InvalidInput("unknown option '" + arg + "'");
    }
  }
  return a;
}

/// Override values are parsed as JSON when possible ("3", "1e-4", "true",
/// "[1,2]") and fall back to plain strings ("train", "data/toy").
json parse_override_value(const std::string& raw) {
  json v = json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (v.is_discarded()) return json(raw);
  return v;
}

void apply_override(json& doc, const std::string& dotted, const std::string& raw) {
  if (dotted.empty() || dotted.front() == '.' || dotted.back() == '.' ||
      dotted.find("..") != std::string::npos)
    throw InvalidInput("bad override key '--" + dotted + "'");
  json* node = &doc;
  std::size_t start = 0;
  for (std::size_t dot = dotted.find('.'); dot != std::string::npos;
       start = dot + 1, dot = dotted.find('.', start)) {
    json& next = (*node)[dotted.substr(start, dot - start)];
    if (!next.is_object()) next = json::object();
    node = &next;
  }
  (*node)[dotted.substr(start)] = parse_override_value(raw);
}

RunConfig resolve_config(const Args& a) {
  json doc = a.config_path.empty() ? json::object() : load_config_json(a.config_path);
  for (const auto& [key, raw] : a.overrides) apply_override(doc, key, raw);
  RunConfig cfg = doc.get<RunConfig>();
  cfg.validate();
  return cfg;
}

std::string sample_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", i);
  return buf;
}

fs::path run_directory(const RunConfig& cfg) {
  return fs::path(cfg.data.run_root) / ("run-" + config_hash(cfg));
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& cfg, const Args& a, std::ostream& out) {
  const std::string root = a.out.empty() ? cfg.data.root : a.out;
  const int C = cfg.pipeline.num_classes;
  if (cfg.synth.rig.cam_width != cfg.pipeline.cam_width ||
      cfg.synth.rig.cam_height != cfg.pipeline.cam_height)
    throw InvalidInput("synth: rig camera " + std::to_string(cfg.synth.rig.cam_width) + "x" +
                       std::to_string(cfg.synth.rig.cam_height) + " does not match pipeline " +
                       std::to_string(cfg.pipeline.cam_width) + "x" +
                       std::to_string(cfg.pipeline.cam_height));

  io::Manifest m;
  m.num_classes = C;
  m.palette = synth::default_palette(C);
  m.splits[cfg.data.train_split] = {};
  m.splits[cfg.data.val_split] = {};

  const int count = cfg.synth.count;
  const int n_val = static_cast<int>(std::lround(count * cfg.synth.val_fraction));
  const int n_train = count - n_val;
  for (int i = 0; i < count; ++i) {
    const std::string name = sample_name(i);
    const synth::SceneSpec spec = synth::random_scene(cfg.synth.seed + i, C, cfg.synth.rig);
    io::write_sample(root, name, synth::generate_scene(spec), m.palette);
    m.splits[i < n_train ? cfg.data.train_split : cfg.data.val_split].push_back(name);
  }
  io::save_manifest(root, m);
  out << "synth: wrote " << count << " samples (" << n_train << " " << cfg.data.train_split
      << ", " << n_val << " " << cfg.data.val_split << ") under " << root << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const RunConfig& cfg, const Args& a, std::ostream& out) {
  const std::string root = cfg.data.root;
  const io::Manifest m = io::load_manifest(root);
  if (m.num_classes != cfg.pipeline.num_classes)
    throw InvalidInput("train: dataset has " + std::to_string(m.num_classes) +
                       " classes, pipeline expects " + std::to_string(cfg.pipeline.num_classes));
  const auto train_set = io::load_split(root, m, cfg.data.train_split);
  const auto val_set = io::load_split(root, m, cfg.data.val_split);

  train::Trainer<float> trainer(cfg.generator, cfg.critic, cfg.train, cfg.pipeline);
  if (!a.resume.empty()) trainer.load_checkpoint(ck::load(a.resume));

  const fs::path run_dir = run_directory(cfg);
  fs::create_directories(run_dir);
  {
    const fs::path cfg_path = run_dir / "config.json";
    std::ofstream f(cfg_path);
    if (!f) throw IoError(cfg_path.string() + ": cannot open for writing");
    f << json(cfg).dump(2) << "\n";
  }
  out << "train: " << train_set.size() << " train / " << val_set.size()
      << " val samples, run directory " << run_dir.string() << "\n";
  trainer.fit(train_set, val_set, run_dir.string(), json(cfg));
  out << "train: finished at epoch " << trainer.epoch() << " after " << trainer.gen_updates()
      << " generator updates (" << trainer.critic_updates() << " critic updates)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

std::string fmt(double v, int prec = 4) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

Eigen::RowVectorXd embed_depth(const ArrayXX<double>& depth, int e) {
  const ArrayXX<double> small = resize_bilinear(depth, e, e);
  Eigen::RowVectorXd row(static_cast<Eigen::Index>(e) * e);
  for (int r = 0; r < e; ++r)
    for (int c = 0; c < e; ++c) row[static_cast<Eigen::Index>(r) * e + c] = small(r, c);
  return row;
}

int cmd_eval(const RunConfig& cfg, const Args& a, std::ostream& out) {
  if (a.checkpoint.empty() && !a.gt_self)
    throw InvalidInput("eval: pass --checkpoint PATH (or --gt-self to score ground truth)");

  const std::string root = cfg.data.root;
  const io::Manifest m = io::load_manifest(root);
  if (m.num_classes != cfg.pipeline.num_classes)
    throw InvalidInput("eval: dataset has " + std::to_string(m.num_classes) +
                       " classes, pipeline expects " + std::to_string(cfg.pipeline.num_classes));
  const std::string split = a.split.empty() ? cfg.data.val_split : a.split;
  const auto samples = io::load_split(root, m, split);
  if (samples.empty()) throw InvalidInput("eval: split '" + split + "' is empty");

  const int C = cfg.pipeline.num_classes;
  const int E = cfg.eval.frechet_embed;
  const bool with_depth = cfg.generator.depth_head || a.gt_self;
  const auto n = static_cast<Eigen::Index>(samples.size());

  nn::Generator<float> gen;
  if (!a.gt_self) {
    Rng init(0);
    gen = nn::Generator<float>(cfg.generator, init);
    const ck::Checkpoint ckpt = ck::load(a.checkpoint);
    const auto refs = gen.params();
    ckpt.restore("gen.", refs);
  }

  Confusion conf = Confusion::Zero(C, C);
  std::vector<ArrayXX<double>> real_depths, fake_depths;
  MatrixX<double> real_emb(n, static_cast<Eigen::Index>(E) * E);
  MatrixX<double> fake_emb(n, static_cast<Eigen::Index>(E) * E);
  DepthMetrics dsum;
  std::int64_t dcount = 0;

  for (Eigen::Index i = 0; i < n; ++i) {
    const train::Prepared<float> p = train::prepare_sample<float>(samples[i], cfg.pipeline);
    const ArrayXX<double> gt_depth = p.guide.cast<double>();
    ArrayXXi pred_labels;
    ArrayXX<double> pred_depth;
    if (a.gt_self) {
      pred_labels = p.seg_labels;
      pred_depth = gt_depth;
    } else {
      ad::NoGradGuard ng;
      const auto [logits, depth] = gen.forward(p.input);
      pred_labels = train::Trainer<float>::argmax_channels(logits);
      if (with_depth) {
        pred_depth.resize(gt_depth.rows(), gt_depth.cols());
        const auto& v = depth.value();
        for (Eigen::Index r = 0; r < pred_depth.rows(); ++r)
          for (Eigen::Index c = 0; c < pred_depth.cols(); ++c)
            pred_depth(r, c) = static_cast<double>(v[r * pred_depth.cols() + c]);
      }
    }
    conf += confusion(pred_labels, p.seg_labels, C);
    if (with_depth) {
      const ArrayXXb mask = gt_depth > 0.0;
      if (mask.any()) {
        const DepthMetrics dm = depth_metrics(pred_depth, gt_depth, mask);
        dsum.absrel += dm.absrel;
        dsum.sqrel += dm.sqrel;
        dsum.rms += dm.rms;
        dsum.rmslog10 += dm.rmslog10;
        dsum.d1 += dm.d1;
        dsum.d2 += dm.d2;
        dsum.d3 += dm.d3;
        ++dcount;
      }
      real_depths.push_back(gt_depth);
      fake_depths.push_back(pred_depth);
      real_emb.row(i) = embed_depth(gt_depth, E);
      fake_emb.row(i) = embed_depth(pred_depth, E);
    }
  }

  const IouReport ir = iou(conf);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  DepthMetrics davg;
  double swd_avg = nan, frechet = nan;
  if (with_depth) {
    const double inv = dcount > 0 ? 1.0 / static_cast<double>(dcount) : nan;
    davg = {dsum.absrel * inv, dsum.sqrel * inv,  dsum.rms * inv, dsum.rmslog10 * inv,
            dsum.d1 * inv,     dsum.d2 * inv,     dsum.d3 * inv};
    swd_avg = swd(real_depths, fake_depths, cfg.pipeline.swd).average_x1e3;
    // The distance is nonnegative by definition; identical sets can land a
    // hair below zero through the eigendecomposition, so clamp.
    if (n >= 2) frechet = std::max(0.0, frechet_distance(real_emb, fake_emb));
  } else {
    davg = {nan, nan, nan, nan, nan, nan, nan};
  }

  // CSV: one row, per-class IoU columns included.
  const fs::path eval_dir = a.out.empty() ? run_directory(cfg) : fs::path(a.out);
  fs::create_directories(eval_dir);
  const fs::path csv_path = eval_dir / ("eval_" + split + ".csv");
  {
    std::ofstream csv(csv_path);
    if (!csv) throw IoError(csv_path.string() + ": cannot open for writing");
    csv.precision(9);
    csv << "split,samples,miou";
    for (int c = 0; c < C; ++c) csv << ",iou_" << c;
    csv << ",absrel,sqrel,rms,rmslog10,d1,d2,d3,swd_avg_x1e3,frechet\n";
    csv << split << "," << n << "," << ir.miou;
    for (int c = 0; c < C; ++c) csv << "," << ir.per_class[c];
    csv << "," << davg.absrel << "," << davg.sqrel << "," << davg.rms << "," << davg.rmslog10
        << "," << davg.d1 << "," << davg.d2 << "," << davg.d3 << "," << swd_avg << "," << frechet
        << "\n";
  }

  out << "eval: split '" << split << "', " << n << " samples"
      << (a.gt_self ? ", ground truth against itself" : ", checkpoint " + a.checkpoint) << "\n";
  out << "  class      iou\n";
  for (int c = 0; c < C; ++c)
    out << "  " << std::left << std::setw(11) << c << fmt(ir.per_class[c]) << "\n";
  out << "  mIoU       " << fmt(ir.miou) << "\n";
  out << "  AbsRel " << fmt(davg.absrel) << "  SqRel " << fmt(davg.sqrel) << "  RMS "
      << fmt(davg.rms) << "  RMSlog10 " << fmt(davg.rmslog10) << "\n";
  out << "  d1 " << fmt(davg.d1) << "  d2 " << fmt(davg.d2) << "  d3 " << fmt(davg.d3) << "\n";
  out << "  SWD(x1e3) " << fmt(swd_avg) << "  Frechet " << fmt(frechet) << "\n";
  out << "  wrote " << csv_path.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

ad::Tensor<float> slice_cols(const ad::Tensor<float>& x, int c0, int w_out) {
  const auto& sh = x.shape();
  const int C = sh[0], h = sh[1], w = sh[2];
  const auto& v = x.value();
  ArrayX<float> out(static_cast<std::int64_t>(C) * h * w_out);
  for (int c = 0; c < C; ++c)
    for (int r = 0; r < h; ++r)
      for (int u = 0; u < w_out; ++u)
        out[(static_cast<std::int64_t>(c) * h + r) * w_out + u] =
            v[(static_cast<std::int64_t>(c) * h + r) * w + c0 + u];
  return ad::Tensor<float>::constant(std::move(out), {C, h, w_out});
}

std::string find_labels(const Args& a) {
  if (!a.labels.empty()) return a.labels;
  const fs::path cp(a.cloud);
  const fs::path cand = cp.parent_path().filename() == "velodyne"
                            ? cp.parent_path().parent_path() / "labels" /
                                  (cp.stem().string() + ".label")
                            : cp.parent_path() / (cp.stem().string() + ".label");
  if (!fs::exists(cand))
    throw InvalidInput("infer: no label file found at " + cand.string() + "; pass --labels");
  return cand.string();
}

int cmd_infer(const RunConfig& cfg, const Args& a, std::ostream& out) {
  if (a.checkpoint.empty()) throw InvalidInput("infer: --checkpoint is required");
  if (a.cloud.empty()) throw InvalidInput("infer: --cloud is required");
  if (a.out.empty()) throw InvalidInput("infer: --out is required");

  const PointCloud<float> cloud = io::read_cloud(a.cloud);
  const std::vector<std::uint32_t> labels = io::read_labels(find_labels(a));
  if (labels.size() != static_cast<std::size_t>(cloud.size()))
    throw InvalidInput("infer: label count " + std::to_string(labels.size()) +
                       " does not match point count " + std::to_string(cloud.size()));

  const int C = cfg.pipeline.num_classes;
  synth::Palette palette = synth::default_palette(C);
  if (fs::exists(fs::path(cfg.data.root) / "manifest.json")) {
    const io::Manifest m = io::load_manifest(cfg.data.root);
    if (static_cast<int>(m.palette.size()) >= C) palette = m.palette;
  }

  Rng init(0);
  nn::Generator<float> gen(cfg.generator, init);
  const ck::Checkpoint ckpt = ck::load(a.checkpoint);
  ckpt.restore("gen.", gen.params());

  train::PipelineConfig pc = cfg.pipeline;
  if (a.panorama) pc.cam_hfov_deg = 360.0;
  const train::PreparedInput<float> pin = train::prepare_input<float>(cloud, labels, pc);

  const int cw = cfg.generator.input_width;
  const int tiles = a.panorama ? pin.image.width / cw : 1;
  if (a.panorama && (tiles < 1 || pin.image.width % cw != 0))
    throw InvalidInput("infer: projection width " + std::to_string(pin.image.width) +
                       " is not a multiple of the generator input width " + std::to_string(cw));

  const int H = cfg.pipeline.cam_height, W = cfg.pipeline.cam_width;
  ArrayXXi seg_full(H, static_cast<Eigen::Index>(W) * tiles);
  ArrayXX<float> depth_full = ArrayXX<float>::Zero(H, static_cast<Eigen::Index>(W) * tiles);

  {
    ad::NoGradGuard ng;
    for (int t = 0; t < tiles; ++t) {
      const ad::Tensor<float> tile = tiles == 1 ? pin.input : slice_cols(pin.input, t * cw, cw);
      const auto [logits, depth] = gen.forward(tile);
      seg_full.middleCols(static_cast<Eigen::Index>(t) * W, W) =
          train::Trainer<float>::argmax_channels(logits);
      if (cfg.generator.depth_head) {
        const auto& v = depth.value();
        for (int r = 0; r < H; ++r)
          for (int c = 0; c < W; ++c)
            depth_full(r, static_cast<Eigen::Index>(t) * W + c) =
                v[static_cast<std::int64_t>(r) * W + c];
      }
    }
  }

  fs::create_directories(a.out);
  const fs::path od(a.out);
  const ArrayXX<float> lidar_range =
      pin.image.mask.select(pin.image.range, ArrayXX<float>::Zero(pin.image.height,
                                                                  pin.image.width));
  io::write_depth_png((od / "lidar_range.png").string(), lidar_range);
  io::write_png_indexed8((od / "lidar_segments.png").string(), pin.lidar_labels, palette);
  io::write_png_indexed8((od / "segments.png").string(), seg_full, palette);
  io::write_depth_png((od / "depth.png").string(), depth_full);
  io::write_png_rgb8((od / "rgb.png").string(), synth::paint_segments(seg_full, palette));

  out << "infer: " << cloud.size() << " points -> " << seg_full.cols() << "x" << seg_full.rows()
      << (a.panorama ? " panorama (" + std::to_string(tiles) + " tiles)" : "") << " under "
      << a.out << "\n";
  for (const char* f : {"lidar_range.png", "lidar_segments.png", "segments.png", "depth.png",
                        "rgb.png"})
    out << "  " << (od / f).string() << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    const Args a = parse_args(args);
    if (a.help) {
      out << kUsage;
      return 0;
    }
    const RunConfig cfg = resolve_config(a);
    if (a.verb == "synth") return cmd_synth(cfg, a, out);
    if (a.verb == "train") return cmd_train(cfg, a, out);
    if (a.verb == "eval") return cmd_eval(cfg, a, out);
    return cmd_infer(cfg, a, out);
  } catch (const TrainingDivergence& e) {
    err << "titan: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "titan: error: " << e.what() << "\n";
    if (args.empty() || (!args.empty() && args[0] != "synth" && args[0] != "train" &&
                         args[0] != "eval" && args[0] != "infer"))
      err << kUsage;
    return 2;
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  args.reserve(argc > 0 ? static_cast<std::size_t>(argc) - 1 : 0);
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace titan::cli
