// Copyright 2026 The TCM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Command-line front end: gradcheck, correlate, displace, synth, train,
// eval, robustness and flops.
//
// Exit status: 0 success, 1 check failure, 2 usage or input error,
// 3 numerical error.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <locale>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tcm/tcm_all.hpp"

namespace fs = std::filesystem;
using namespace tcm;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kUsage = 2, kNumerical = 3 };

struct Global {
  std::uint64_t seed = 42;
  std::string dtype = "f32";
  std::size_t threads = 0;
};

struct GradcheckArgs {
  double tol = 1e-4;
  std::vector<std::string> ops{"all"};
  std::string out;
};

struct CorrelateArgs {
  std::string a, b, out;
  long radius = -1;
};

struct DisplaceArgs {
  std::string video, out, pgm_dir;
  long radius = -1;
  double sigma = 5.0;
  double tau = 0.01;
};

struct SynthArgs {
  std::vector<double> classes{0, 1, 2};
  std::size_t count = 400;
  std::size_t frames = 8;
  std::size_t size = 32;
  std::string out;
};

struct TrainArgs {
  std::string data, out, tcm = "on";
  std::size_t epochs = 30;
  double lr = 0.01;
  double clip_norm = 0.0;
  std::size_t batch_size = 10;
};

struct EvalArgs {
  std::string model, data;
  std::size_t stride = 1;
};

struct RobustnessArgs {
  std::string model, data, out;
  std::vector<std::size_t> strides{1, 2, 3, 4};
};

struct FlopsArgs {
  std::uint64_t t = 0, c = 0, h = 0, w = 0;
  long radius = -1;
};

// Writes text with LF endings and the classic locale.
class CsvFile {
 public:
  explicit CsvFile(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw FormatError("cannot write " + path);
    out_.imbue(std::locale::classic());
    out_ << std::setprecision(9);
  }
  std::ostream& stream() { return out_; }

 private:
  std::ofstream out_;
};

std::string join(const std::vector<std::string>& parts) {
  std::string s;
  for (const auto& p : parts) s += (s.empty() ? "" : ",") + p;
  return s;
}

template <class V>
std::string join_values(const std::vector<V>& values) {
  std::ostringstream s;
  s.imbue(std::locale::classic());
  for (std::size_t i = 0; i < values.size(); ++i) s << (i ? "," : "") << values[i];
  return s.str();
}

void print_config(const std::string& command, const Global& g,
                  const std::vector<std::pair<std::string, std::string>>& extra) {
  std::cout << "config: command=" << command << " seed=" << g.seed << " dtype=" << g.dtype
            << " threads=" << thread_count();
  for (const auto& [k, v] : extra) std::cout << ' ' << k << '=' << v;
  std::cout << '\n';
}

std::string num(double v) {
  std::ostringstream s;
  s.imbue(std::locale::classic());
  s << v;
  return s.str();
}

// -- gradcheck --------------------------------------------------------------

int run_gradcheck(const GradcheckArgs& a, const Global& g) {
  std::vector<std::string> ops = a.ops;
  if (ops.size() == 1 && ops[0] == "all") ops = gradcheck_op_names();
  const auto known = gradcheck_op_names();
  for (const auto& op : ops) {
    if (std::find(known.begin(), known.end(), op) == known.end()) {
      std::cerr << "error: unknown op '" << op << "'\n";
      return kUsage;
    }
  }
  print_config("gradcheck", g, {{"tol", num(a.tol)}, {"ops", join(ops)}, {"compute", "f64"}});
  std::vector<GradcheckReport> reports;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    reports.push_back(gradcheck(ops[i], {}, derive_seed(g.seed, i), a.tol));
  }
  bool ok = true;
  std::cout << std::left << std::setw(26) << "op" << std::setw(28) << "input" << "max_rel_err\n";
  for (const auto& r : reports) {
    for (const auto& e : r.entries) {
      std::cout << std::setw(26) << r.op << std::setw(28) << e.name << std::scientific
                << std::setprecision(3) << e.max_error << std::defaultfloat << '\n';
    }
    ok = ok && r.passed;
  }
  for (const auto& r : reports) {
    if (!r.passed) std::cout << "FAIL " << r.op << " max rel err " << r.max_error() << '\n';
  }
  if (!a.out.empty()) {
    CsvFile csv(a.out);
    csv.stream() << "op,input,max_rel_err,pass\n";
    for (const auto& r : reports) {
      for (const auto& e : r.entries) {
        csv.stream() << r.op << ',' << e.name << ',' << e.max_error << ','
                     << (e.max_error <= a.tol ? 1 : 0) << '\n';
      }
    }
  }
  std::cout << (ok ? "all ops passed\n" : "gradient check failed\n");
  return ok ? kOk : kCheckFailed;
}

// -- correlate / displace ---------------------------------------------------

template <Real T>
int run_correlate(const CorrelateArgs& a, const Global& g) {
  const Tensor<T> fa = load_tsr_as<T>(a.a), fb = load_tsr_as<T>(a.b);
  if (fa.shape() != fb.shape()) {
    throw DimensionError("correlate: shapes " + to_string(fa.shape()) + " and " +
                         to_string(fb.shape()) + " differ");
  }
  require_rank(fa, 3, "correlate input [C,H,W]");
  const std::size_t radius =
      a.radius >= 0 ? static_cast<std::size_t>(a.radius) : CorrConfig::default_radius(fa.dim(1));
  print_config("correlate", g,
               {{"a", a.a}, {"b", a.b}, {"radius", std::to_string(radius)}, {"out", a.out}});
  const Tensor<T> vol = correlate(fa, fb, radius);
  save_tsr(a.out, vol);
  std::cout << "wrote " << to_string(vol.shape()) << " to " << a.out << '\n';
  return kOk;
}

template <Real T>
void write_pgm(const fs::path& path, const T* plane, std::size_t H, std::size_t W, double lo,
               double hi) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "P5\n" << W << ' ' << H << "\n255\n";
  const double span = hi > lo ? hi - lo : 1.0;
  for (std::size_t i = 0; i < H * W; ++i) {
    const double v = std::clamp((static_cast<double>(plane[i]) - lo) / span, 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
}

template <Real T>
int run_displace(const DisplaceArgs& a, const Global& g) {
  Tensor<T> video = load_tsr_as<T>(a.video);
  require_rank(video, 4, "displace input [C,T,H,W]");
  const std::size_t radius = a.radius >= 0 ? static_cast<std::size_t>(a.radius)
                                            : CorrConfig::default_radius(video.dim(2));
  MatchConfig cfg{a.sigma, a.tau};
  cfg.validate();
  print_config("displace", g,
               {{"video", a.video}, {"radius", std::to_string(radius)}, {"sigma", num(a.sigma)},
                {"tau", num(a.tau)}, {"out", a.out}, {"pgm_dir", a.pgm_dir}});
  const PairSpec pairs = build_pairs(video.dim(1));
  const auto [fast, slow] = correlate_pairs(video, pairs, radius);
  const DisplacementTensor<T> d = estimate_displacements(fast, slow, cfg);
  save_tsr(a.out, d.maps);

  const std::size_t frames = d.maps.dim(1), H = d.maps.dim(2), W = d.maps.dim(3);
  const std::size_t plane = H * W;
  double mean_dx = 0, mean_dy = 0;
  for (std::size_t i = 0; i < frames * plane; ++i) {
    mean_dx += std::abs(static_cast<double>(d.maps[i]));
    mean_dy += std::abs(static_cast<double>(d.maps[frames * plane + i]));
  }
  std::cout << std::setprecision(6) << "fast mean |dx| " << mean_dx / double(frames * plane)
            << " mean |dy| " << mean_dy / double(frames * plane) << '\n';

  if (!a.pgm_dir.empty()) {
    fs::create_directories(a.pgm_dir);
    static const char* names[] = {"fast_dx", "fast_dy", "fast_conf",
                                  "slow_dx", "slow_dy", "slow_conf"};
    const double R = static_cast<double>(radius);
    for (std::size_t c = 0; c < 6; ++c) {
      double hi = 0;
      if (c % 3 == 2) {
        for (std::size_t i = 0; i < frames * plane; ++i) {
          hi = std::max(hi, static_cast<double>(d.maps[c * frames * plane + i]));
        }
      }
      for (std::size_t t = 0; t < frames; ++t) {
        char name[48];
        std::snprintf(name, sizeof(name), "%s_t%02zu.pgm", names[c], t);
        const T* p = d.maps.data() + (c * frames + t) * plane;
        if (c % 3 == 2) {
          write_pgm(fs::path(a.pgm_dir) / name, p, H, W, 0.0, hi);
        } else {
          write_pgm(fs::path(a.pgm_dir) / name, p, H, W, -R, R);
        }
      }
    }
  }
  return kOk;
}

// -- synth / train / eval ---------------------------------------------------

template <Real T>
int run_synth(const SynthArgs& a, const Global& g) {
  SynthConfig cfg;
  cfg.velocities = a.classes;
  cfg.count = a.count;
  cfg.frames = a.frames;
  cfg.height = cfg.width = a.size;
  print_config("synth", g,
               {{"classes", join_values(a.classes)}, {"count", std::to_string(a.count)},
                {"frames", std::to_string(a.frames)}, {"size", std::to_string(a.size)},
                {"out", a.out}});
  save_dataset(a.out, gen_dataset<T>(cfg, g.seed));
  std::cout << "wrote " << a.count << " samples to " << a.out << '\n';
  return kOk;
}

template <Real T>
std::vector<SynthSample<T>> load_data(const std::string& dir) {
  if (!fs::is_directory(dir)) throw FormatError("data directory not found: " + dir);
  auto data = load_dataset<T>(dir);
  if (data.empty()) throw ConfigError("dataset " + dir + " is empty");
  return data;
}

template <Real T>
int run_train(const TrainArgs& a, const Global& g) {
  auto data = load_data<T>(a.data);
  ToyNetConfig nc;
  nc.variant = parse_variant(a.tcm);
  std::size_t classes = 0;
  for (const auto& s : data) classes = std::max(classes, s.label + 1);
  nc.classes = std::max<std::size_t>(classes, 2);
  nc.frames = data[0].video.dim(1);
  nc.height = data[0].video.dim(2);
  nc.width = data[0].video.dim(3);
  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.lr = a.lr;
  tc.clip_norm = a.clip_norm;
  tc.batch_size = a.batch_size;
  tc.seed = derive_seed(g.seed, 2);
  print_config("train", g,
               {{"data", a.data}, {"tcm", a.tcm}, {"epochs", std::to_string(a.epochs)},
                {"lr", num(a.lr)}, {"clip_norm", num(a.clip_norm)},
                {"batch_size", std::to_string(a.batch_size)}, {"out", a.out}});
  ToyNet<T> net = make_toynet<T>(nc, derive_seed(g.seed, 1));
  const TrainResult r = train(net, data, tc);
  fs::create_directories(a.out);
  save_model(a.out, net);
  CsvFile csv((fs::path(a.out) / "loss.csv").string());
  csv.stream() << "epoch,loss\n";
  for (std::size_t e = 0; e < r.loss_curve.size(); ++e) {
    csv.stream() << e << ',' << r.loss_curve[e] << '\n';
  }
  std::cout << "final loss " << (r.loss_curve.empty() ? 0.0 : r.loss_curve.back())
            << ", train accuracy " << evaluate(net, data) << '\n';
  return kOk;
}

template <Real T>
int run_eval(const EvalArgs& a, const Global& g) {
  if (!fs::is_directory(a.model)) throw FormatError("model directory not found: " + a.model);
  const ToyNet<T> net = load_model<T>(a.model);
  const auto data = load_data<T>(a.data);
  print_config("eval", g, {{"model", a.model}, {"data", a.data}, {"stride", std::to_string(a.stride)}});
  std::cout << std::setprecision(6) << "accuracy " << evaluate(net, data, a.stride) << '\n';
  return kOk;
}

template <Real T>
int run_robustness(const RobustnessArgs& a, const Global& g) {
  if (!fs::is_directory(a.model)) throw FormatError("model directory not found: " + a.model);
  const ToyNet<T> net = load_model<T>(a.model);
  const auto data = load_data<T>(a.data);
  print_config("robustness", g,
               {{"model", a.model}, {"data", a.data}, {"strides", join_values(a.strides)},
                {"out", a.out}});
  std::vector<double> acc;
  for (std::size_t s : a.strides) acc.push_back(evaluate(net, data, s));
  if (!a.out.empty()) {
    CsvFile csv(a.out);
    csv.stream() << "stride,accuracy\n";
    for (std::size_t i = 0; i < acc.size(); ++i) csv.stream() << a.strides[i] << ',' << acc[i] << '\n';
  }
  std::cout << "stride,accuracy\n";
  for (std::size_t i = 0; i < acc.size(); ++i) std::cout << a.strides[i] << ',' << acc[i] << '\n';
  return kOk;
}

int run_flops(const FlopsArgs& a, const Global& g) {
  const std::uint64_t radius =
      a.radius >= 0 ? static_cast<std::uint64_t>(a.radius) : CorrConfig::default_radius(a.h);
  print_config("flops", g,
               {{"t", std::to_string(a.t)}, {"c", std::to_string(a.c)}, {"h", std::to_string(a.h)},
                {"w", std::to_string(a.w)}, {"radius", std::to_string(radius)}});
  const std::int64_t per_scale = correlation_flops(a.t, a.c, a.h, a.w, radius);
  if (per_scale > std::numeric_limits<std::int64_t>::max() / 2) {
    throw ConfigError("flops: two-scale total exceeds 2^63 - 1");
  }
  std::cout << "per_scale " << per_scale << '\n' << "two_scale " << 2 * per_scale << '\n';
  return kOk;
}

template <class F>
int dispatch_dtype(const Global& g, F&& f) {
  if (g.dtype == "f64") return f(double{});
  return f(float{});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal correlation module toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--dtype", g.dtype, "Floating point type")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();
  auto* threads_opt = app.add_option("--threads", g.threads, "Worker threads (default: all cores)")
                          ->check(CLI::PositiveNumber);

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  c_gc->add_option("--tol", gc.tol)->capture_default_str()->check(CLI::NonNegativeNumber);
  c_gc->add_option("--ops", gc.ops, "Comma separated op names or 'all'")->delimiter(',');
  c_gc->add_option("--out", gc.out, "CSV report");

  CorrelateArgs cr;
  auto* c_cr = app.add_subcommand("correlate", "Correlation volume of two [C,H,W] tensors");
  c_cr->add_option("--a", cr.a)->required();
  c_cr->add_option("--b", cr.b)->required();
  c_cr->add_option("--radius", cr.radius, "Default ceil(H/2)")->check(CLI::NonNegativeNumber);
  c_cr->add_option("--out", cr.out)->required();

  DisplaceArgs dp;
  auto* c_dp = app.add_subcommand("displace", "Displacement maps of a [C,T,H,W] video");
  c_dp->add_option("--video", dp.video)->required();
  c_dp->add_option("--radius", dp.radius, "Default ceil(H/2)")->check(CLI::NonNegativeNumber);
  c_dp->add_option("--sigma", dp.sigma)->capture_default_str();
  c_dp->add_option("--tau", dp.tau)->capture_default_str();
  c_dp->add_option("--out", dp.out)->required();
  c_dp->add_option("--pgm-dir", dp.pgm_dir, "Write 8-bit PGM renderings here");

  SynthArgs sy;
  auto* c_sy = app.add_subcommand("synth", "Generate a synthetic tempo dataset");
  c_sy->add_option("--classes", sy.classes, "Velocities in pixels per frame")->delimiter(',');
  c_sy->add_option("--count", sy.count)->capture_default_str();
  c_sy->add_option("--frames", sy.frames)->capture_default_str();
  c_sy->add_option("--size", sy.size)->capture_default_str();
  c_sy->add_option("--out", sy.out)->required();

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train the toy host network");
  c_tr->add_option("--data", tr.data)->required();
  c_tr->add_option("--epochs", tr.epochs)->capture_default_str();
  c_tr->add_option("--lr", tr.lr)->capture_default_str()->check(CLI::NonNegativeNumber);
  c_tr->add_option("--clip-norm", tr.clip_norm, "Gradient norm bound, 0 disables")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  c_tr->add_option("--batch-size", tr.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
  c_tr->add_option("--tcm", tr.tcm, "on, off, or temporal (temporal-conv baseline)")
      ->check(CLI::IsMember({"on", "off", "temporal"}))
      ->capture_default_str();
  c_tr->add_option("--out", tr.out)->required();

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Top-1 accuracy of a trained model");
  c_ev->add_option("--model", ev.model)->required();
  c_ev->add_option("--data", ev.data)->required();
  c_ev->add_option("--stride", ev.stride)->capture_default_str()->check(CLI::PositiveNumber);

  RobustnessArgs rb;
  auto* c_rb = app.add_subcommand("robustness", "Accuracy over temporal re-sampling strides");
  c_rb->add_option("--model", rb.model)->required();
  c_rb->add_option("--data", rb.data)->required();
  c_rb->add_option("--strides", rb.strides)->delimiter(',')->check(CLI::PositiveNumber);
  c_rb->add_option("--out", rb.out);

  FlopsArgs fl;
  auto* c_fl = app.add_subcommand("flops", "Correlation multiply-accumulate count");
  c_fl->set_help_flag("--help", "Print this help message and exit");
  c_fl->add_option("--t", fl.t)->required();
  c_fl->add_option("--c", fl.c)->required();
  c_fl->add_option("--h", fl.h)->required();
  c_fl->add_option("--w", fl.w)->required();
  c_fl->add_option("--radius", fl.radius, "Default ceil(H/2)")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (threads_opt->count() > 0) {
      set_thread_count(g.threads);
    } else if (const char* env = std::getenv("TCM_THREADS")) {
      char* end = nullptr;
      const long n = std::strtol(env, &end, 10);
      if (end == env || *end != '\0' || n < 1) {
        std::cerr << "error: TCM_THREADS must be a positive integer, got '" << env << "'\n";
        return kUsage;
      }
      set_thread_count(static_cast<std::size_t>(n));
    }

    if (c_gc->parsed()) return run_gradcheck(gc, g);
    if (c_fl->parsed()) return run_flops(fl, g);
    return dispatch_dtype(g, [&](auto zero) -> int {
      using T = decltype(zero);
      if (c_cr->parsed()) return run_correlate<T>(cr, g);
      if (c_dp->parsed()) return run_displace<T>(dp, g);
      if (c_sy->parsed()) return run_synth<T>(sy, g);
      if (c_tr->parsed()) return run_train<T>(tr, g);
      if (c_ev->parsed()) return run_eval<T>(ev, g);
      return run_robustness<T>(rb, g);
    });
  } catch (const TrainingError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  } catch (const EvaluationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  } catch (const StateError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
}
