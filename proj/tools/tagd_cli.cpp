// tagd: command-line driver for the gesture authentication pipeline.
//
// Every subcommand writes its artifacts under --out and echoes the fully
// resolved settings as run.toml. Precedence: flags > --config file > defaults.
// Exit codes: 0 ok, 2 usage error, 3 data error, 4 numeric failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tagd/tagd.hpp"

namespace fs = std::filesystem;
using namespace tagd;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct Common {
  std::string data;
  std::string out;
  double train_fraction = 0.8;
  std::uint64_t seed = 7;
  std::size_t jobs = 1;
  CsvLayout layout;
  std::string axis_cols = "gFx,gFy,gFz";
  std::string delimiter = ",";
};

template <typename T>
std::vector<T> parse_list(const std::string& s) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::istringstream is(item);
    T v{};
    if (!(is >> v) || !is.eof()) throw InvalidArgument("bad list element '" + item + "'");
    out.push_back(v);
  }
  return out;
}

void finalize_layout(Common& c) {
  const auto cols = parse_list<std::string>(c.axis_cols);
  if (cols.size() != 3) throw InvalidArgument("--axis-cols needs exactly 3 names");
  for (std::size_t a = 0; a < 3; ++a) c.layout.axis_columns[a] = cols[a];
  if (c.delimiter.size() != 1) throw InvalidArgument("--delimiter must be a single character");
  c.layout.delimiter = c.delimiter[0];
}

// A dataset path may be a TAGDSET file, a directory holding dataset.tagd, or a
// CSV tree root/<user>/*.csv.
Dataset load_any(const Common& c) {
  if (c.data.empty()) throw DataError("no input: --data is required");
  const fs::path p(c.data);
  if (!fs::exists(p)) throw DataError("input does not exist: " + p.string());
  if (fs::is_regular_file(p)) return load_dataset(p);
  if (fs::is_regular_file(p / "dataset.tagd")) return load_dataset(p / "dataset.tagd");
  return load_dir(p, c.layout);
}

fs::path out_dir(const Common& c, const std::string& sub) {
  fs::path dir;
  if (!c.out.empty()) {
    dir = c.out;
  } else if (const char* root = std::getenv("TAGD_OUT_ROOT")) {
    dir = fs::path(root) / sub;
  } else {
    dir = fs::path("tagd-runs") / sub;
  }
  fs::create_directories(dir);
  return dir;
}

std::ofstream open_out(const fs::path& p, bool binary = false) {
  std::ofstream f(p, binary ? std::ios::binary : std::ios::out);
  if (!f) throw DataError("cannot write " + p.string());
  return f;
}

void add_common(CLI::App* app, Common& c, bool needs_data = true) {
  if (needs_data) {
    app->add_option("--data", c.data, "Dataset: TAGDSET file, directory with dataset.tagd, or CSV tree root/<user>/*.csv");
    app->add_option("--train-fraction", c.train_fraction, "Per-user training fraction")->check(CLI::Range(0.0, 1.0));
    app->add_option("--time-col", c.layout.time_column, "CSV time column name");
    app->add_option("--axis-cols", c.axis_cols, "CSV axis column names x,y,z");
    app->add_option("--delimiter", c.delimiter, "CSV delimiter");
  }
  app->add_option("--seed", c.seed, "Random seed");
  app->add_option("--out", c.out, "Output directory (default $TAGD_OUT_ROOT/<command> or tagd-runs/<command>)");
}

void add_cnn(CLI::App* app, cnn::CnnConfig& c) {
  app->add_option("--kernel", c.kernel, "Convolution kernel size");
  app->add_option("--stride", c.stride, "Convolution stride");
  app->add_option("--filters1", c.filters1, "First conv layer filters");
  app->add_option("--filters2", c.filters2, "Second conv layer filters");
  app->add_option("--dropout", c.dropout, "Dropout rate");
  app->add_option("--hidden", c.hidden, "Hidden dense units");
  app->add_option("--epochs", c.epochs, "Training epochs");
  app->add_option("--batch-size", c.batch_size, "Mini-batch size");
  app->add_option("--lr", c.lr, "Adam learning rate");
}

void add_gan(CLI::App* app, gan::GanConfig& g) {
  app->add_option("--noise-dim", g.noise_dim, "Generator noise width");
  app->add_option("--gan-batch-size", g.batch_size, "GAN mini-batch size");
  app->add_option("--gan-lr", g.lr, "GAN Adam learning rate");
  app->add_option("--gan-beta1", g.beta1, "GAN Adam beta1");
  app->add_option("--real-label", g.real_label, "Discriminator target for real samples");
  app->add_option("--disc-filters1", g.discriminator.filters1, "Discriminator first conv filters");
  app->add_option("--disc-filters2", g.discriminator.filters2, "Discriminator second conv filters");
  app->add_option("--disc-kernel", g.discriminator.kernel, "Discriminator kernel size");
  app->add_option("--disc-stride", g.discriminator.stride, "Discriminator stride");
}

void add_svm(CLI::App* app, svm::SvmOptions& s) {
  app->add_option("--C", s.C, "Regularization parameter")->check(CLI::PositiveNumber);
  app->add_option("--tol", s.tol, "Projected-gradient stopping tolerance");
  app->add_option("--max-iter", s.max_iter, "Maximum epochs per binary problem");
}

void write_run_toml(const CLI::App& app, const std::string& sub, const fs::path& dir) {
  auto f = open_out(dir / "run.toml");
  f << "# resolved configuration; rerun with --config run.toml\n";
  f << "# tagd " << TAGD_VERSION << "\n";
  std::stringstream all(app.config_to_str(true, false));
  std::string line;
  while (std::getline(all, line))
    if (line.rfind(sub + ".", 0) == 0) f << line << '\n';
}

struct Split {
  Dataset train, test;
};

Split split_dataset(const Common& c, const Dataset& ds) {
  auto [tr, te] = split(ds, {c.train_fraction, c.seed});
  return {std::move(tr), std::move(te)};
}

void write_summary(const fs::path& dir, const std::vector<std::string>& rows) {
  auto f = open_out(dir / "summary.csv");
  f << "kind,kernel,stride,n_adversarial,gan_epochs,accuracy,far,frr\n";
  for (const auto& r : rows) f << r << '\n';
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------------------

struct ReportRow {
  std::string kind;
  std::string kernel, stride, n_adv, gan_epochs;
  double accuracy = 0;
};

std::vector<ReportRow> read_summaries(const std::vector<std::string>& runs) {
  std::vector<ReportRow> rows;
  std::vector<fs::path> files;
  for (const auto& r : runs) {
    const fs::path p(r);
    if (fs::is_regular_file(p)) {
      files.push_back(p);
    } else if (fs::is_directory(p)) {
      for (const auto& e : fs::recursive_directory_iterator(p))
        if (e.is_regular_file() && e.path().filename() == "summary.csv") files.push_back(e.path());
    } else {
      throw DataError("report input does not exist: " + r);
    }
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> cols;
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) cols.push_back(cell);
      if (cols.size() < 6) throw DataError("malformed summary row in " + f.string());
      ReportRow r{cols[0], cols[1], cols[2], cols[3], cols[4], std::stod(cols[5])};
      rows.push_back(r);
    }
  }
  return rows;
}

// Pivot rows into a grid keyed by (row key, column key); later rows win.
void write_grid(std::ostream& out, const std::string& row_name, const std::string& col_prefix,
                const std::vector<std::pair<std::string, std::string>>& keys, const std::vector<double>& values) {
  std::vector<std::string> rk, ck;
  auto num_less = [](const std::string& a, const std::string& b) { return std::stod(a) < std::stod(b); };
  for (const auto& [r, c] : keys) {
    if (std::find(rk.begin(), rk.end(), r) == rk.end()) rk.push_back(r);
    if (std::find(ck.begin(), ck.end(), c) == ck.end()) ck.push_back(c);
  }
  std::sort(rk.begin(), rk.end(), num_less);
  std::sort(ck.begin(), ck.end(), num_less);
  std::map<std::pair<std::string, std::string>, double> cell;
  for (std::size_t i = 0; i < keys.size(); ++i) cell[keys[i]] = values[i];
  out << row_name;
  for (const auto& c : ck) out << ',' << col_prefix << c;
  out << '\n';
  for (const auto& r : rk) {
    out << r;
    for (const auto& c : ck) {
      out << ',';
      if (auto it = cell.find({r, c}); it != cell.end()) out << fmt(it->second);
    }
    out << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tagd: accelerometer gesture authentication pipeline"};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "TOML config file (flags override it)");
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(TAGD_VERSION));

  Common common;
  svm::SvmOptions svm_opts;
  cnn::CnnConfig cnn_cfg;
  gan::GanConfig gan_cfg;
  SynthProfile synth;

  auto* c_ingest = app.add_subcommand("ingest", "Load a CSV tree root/<user>/*.csv into a dataset container");
  std::string ingest_root;
  c_ingest->add_option("--root", ingest_root, "CSV tree root")->required();
  c_ingest->add_option("--time-col", common.layout.time_column, "CSV time column name");
  c_ingest->add_option("--axis-cols", common.axis_cols, "CSV axis column names x,y,z");
  c_ingest->add_option("--delimiter", common.delimiter, "CSV delimiter");
  c_ingest->add_option("--out", common.out, "Output directory");

  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic multi-user corpus");
  c_synth->add_option("--users", synth.num_users, "Number of users")->check(CLI::PositiveNumber);
  c_synth->add_option("--per-user", synth.samples_per_user, "Signatures per user")->check(CLI::PositiveNumber);
  c_synth->add_option("--min-length", synth.min_length, "Shortest signature (rows)");
  c_synth->add_option("--max-length", synth.max_length, "Longest signature (rows)");
  c_synth->add_option("--harmonics", synth.harmonics_per_axis, "Sinusoids per axis");
  c_synth->add_option("--noise", synth.noise_sigma, "Gaussian noise sigma (g)");
  c_synth->add_option("--seed", synth.seed, "Random seed");
  c_synth->add_option("--out", common.out, "Output directory");
  bool synth_csv = false;
  c_synth->add_flag("--csv", synth_csv, "Also write the corpus as a CSV tree under <out>/csv");

  auto* c_features = app.add_subcommand("features", "Export the 16 statistical features per signature");
  add_common(c_features, common);

  auto* c_svm = app.add_subcommand("train-svm", "Train and evaluate the one-vs-rest linear SVM");
  add_common(c_svm, common);
  add_svm(c_svm, svm_opts);

  auto* c_rfe = app.add_subcommand("rfe", "SVM recursive feature elimination");
  add_common(c_rfe, common);
  add_svm(c_rfe, svm_opts);

  auto* c_cnn = app.add_subcommand("train-cnn", "Train and evaluate the 1D-CNN");
  add_common(c_cnn, common);
  add_cnn(c_cnn, cnn_cfg);

  auto* c_sweep = app.add_subcommand("sweep", "Kernel x stride grid of 1D-CNN runs");
  add_common(c_sweep, common);
  add_cnn(c_sweep, cnn_cfg);
  std::string kernels = "3,5,10,25", strides = "1,3,6";
  c_sweep->add_option("--kernels", kernels, "Comma-separated kernel sizes");
  c_sweep->add_option("--strides", strides, "Comma-separated strides");
  c_sweep->add_option("--jobs", common.jobs, "Concurrent cells");

  auto* c_gan = app.add_subcommand("train-gan", "Train the DC-GAN forger and export fakes");
  add_common(c_gan, common);
  add_gan(c_gan, gan_cfg);
  std::string checkpoints = "10,25,50,100";
  std::size_t n_export = 10;
  c_gan->add_option("--checkpoints", checkpoints, "Epochs at which to snapshot the generator (max = epochs trained)");
  c_gan->add_option("--export", n_export, "Fakes exported as CSV per checkpoint");

  auto* c_poison = app.add_subcommand("poison", "Poisoning attack grid against the 1D-CNN");
  add_common(c_poison, common);
  add_cnn(c_poison, cnn_cfg);
  add_gan(c_poison, gan_cfg);
  std::string n_list = "100,250,600,1840", gan_epochs = "10,25,50,100", policy = "uniform";
  int victim = 0;
  c_poison->add_option("--n", n_list, "Comma-separated adversarial sample counts");
  c_poison->add_option("--gan-epochs", gan_epochs, "Comma-separated GAN epoch counts");
  c_poison->add_option("--label-policy", policy, "uniform | victim | per-user");
  c_poison->add_option("--victim", victim, "Victim user for --label-policy victim");
  c_poison->add_option("--jobs", common.jobs, "Concurrent cells");

  auto* c_evade = app.add_subcommand("evade", "Evasion attack: classify forged samples with a trained CNN");
  add_common(c_evade, common, false);
  std::string model_path, fakes_path, generator_path;
  std::size_t n_fakes = 100;
  double threshold = 0.5;
  c_evade->add_option("--model", model_path, "CNN checkpoint (model.nn from train-cnn)")->required();
  c_evade->add_option("--fakes", fakes_path, "Forged samples: dataset path or CSV directory");
  c_evade->add_option("--generator", generator_path, "Generator checkpoint to draw fakes from");
  c_evade->add_option("--n", n_fakes, "Fakes to draw from --generator");
  c_evade->add_option("--threshold", threshold, "Softmax confidence needed for acceptance");
  c_evade->add_option("--time-col", common.layout.time_column, "CSV time column name");
  c_evade->add_option("--axis-cols", common.axis_cols, "CSV axis column names x,y,z");

  auto* c_report = app.add_subcommand("report", "Join run summaries into kernel/stride and poisoning grids");
  std::vector<std::string> runs;
  c_report->add_option("runs", runs, "Run directories or summary.csv files")->required();
  c_report->add_option("--out", common.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << "error: code=" << kExitUsage << " kind=usage message=\"" << e.what() << "\"\n";
    return kExitUsage;
  }

  auto* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    finalize_layout(common);
    cnn_cfg.seed = common.seed;
    gan_cfg.seed = common.seed;

    if (sub == c_ingest) {
      const auto dir = out_dir(common, name);
      std::vector<std::string> users;
      const auto ds = load_dir(ingest_root, common.layout, &users);
      save_dataset(dir / "dataset.tagd", ds);
      auto f = open_out(dir / "users.csv");
      f << "label,user\n";
      for (std::size_t i = 0; i < users.size(); ++i) f << i << ',' << users[i] << '\n';
      std::cerr << "ingested " << ds.size() << " samples from " << ds.num_users() << " users\n";
      write_run_toml(app, name, dir);
    } else if (sub == c_synth) {
      const auto dir = out_dir(common, name);
      const auto ds = synth_dataset(synth);
      save_dataset(dir / "dataset.tagd", ds);
      if (synth_csv) {
        std::vector<std::size_t> next(static_cast<std::size_t>(ds.num_users()), 0);
        for (const auto& s : ds.samples()) {
          char user[32], file[32];
          std::snprintf(user, sizeof user, "user%03d", s.user_id);
          std::snprintf(file, sizeof file, "sig%03zu.csv", next[static_cast<std::size_t>(s.user_id)]++);
          fs::create_directories(dir / "csv" / user);
          auto f = open_out(dir / "csv" / user / file);
          write_csv(f, s);
        }
      }
      std::cerr << "wrote " << ds.size() << " samples for " << ds.num_users() << " users\n";
      write_run_toml(app, name, dir);
    } else if (sub == c_features) {
      const auto dir = out_dir(common, name);
      const auto feats = features_all(load_any(common));
      auto f = open_out(dir / "features.csv");
      write_features_csv(f, feats);
      write_run_toml(app, name, dir);
    } else if (sub == c_svm || sub == c_rfe) {
      const auto dir = out_dir(common, name);
      const auto ds = load_any(common);
      const auto sp = split_dataset(common, ds);
      const auto tr = features_all(sp.train), te = features_all(sp.test);
      const auto st = fit_standardizer(std::span<const FeatureVector>(tr));
      const auto trs = st.apply_all<FeatureVector>(tr), tes = st.apply_all<FeatureVector>(te);
      const auto X = svm::to_matrix(trs), Xt = svm::to_matrix(tes);
      const auto y = svm::labels_of(trs), yt = svm::labels_of(tes);
      const RandomStream stream(common.seed);
      if (sub == c_svm) {
        const auto model = svm::train_multiclass(X, y, ds.num_users(), svm_opts, stream);
        auto mf = open_out(dir / "model.svm");
        svm::save_model(mf, model);
        auto sf = open_out(dir / "standardizer.csv");
        sf.precision(17);
        sf << "feature,mean,std,degenerate\n";
        for (std::size_t j = 0; j < st.dims(); ++j) sf << feature_names()[j] << ',' << st.mean[j] << ',' << st.stddev[j] << ',' << st.degenerate[j] << '\n';
        const auto m = evaluate(yt, model.predict_all(Xt), static_cast<std::size_t>(ds.num_users()));
        auto f = open_out(dir / "metrics.csv");
        write_metrics_csv(f, m);
        write_summary(dir, {"svm,,,,," + fmt(m.accuracy) + ',' + fmt(m.far) + ',' + fmt(m.frr)});
        print_metrics(std::cout, m);
      } else {
        const auto r = svm::rfe(X, y, Xt, yt, ds.num_users(), svm_opts, stream);
        auto f = open_out(dir / "rfe.csv");
        svm::write_rfe_csv(f, r);
        auto o = open_out(dir / "elimination_order.csv");
        o << "rank,feature,name\n";
        for (std::size_t i = 0; i < r.elimination_order.size(); ++i)
          o << i + 1 << ',' << r.elimination_order[i] << ',' << feature_names()[r.elimination_order[i]] << '\n';
        for (const auto& s : r.steps)
          std::cout << s.active_count << " features: accuracy " << s.accuracy << ", dropping " << feature_names()[s.eliminated] << '\n';
      }
      write_run_toml(app, name, dir);
    } else if (sub == c_cnn) {
      const auto dir = out_dir(common, name);
      const auto ds = load_any(common);
      const auto sp = split_dataset(common, ds);
      const auto tr = resample_all(sp.train), te = resample_all(sp.test);
      cnn::TrainOptions opts;
      opts.on_epoch = [](const cnn::EpochLog& e) { std::cerr << "epoch " << e.epoch << " loss " << e.loss << " acc " << e.accuracy << '\n'; };
      auto [model, report] = cnn::fit(cnn_cfg, ds.num_users(), tr, te, opts);
      cnn::save_model(dir / "model.nn", model);
      auto ef = open_out(dir / "epochs.csv");
      cnn::write_epoch_csv(ef, report);
      auto mf = open_out(dir / "metrics.csv");
      write_metrics_csv(mf, *report.test);
      write_summary(dir, {"cnn," + std::to_string(cnn_cfg.kernel) + ',' + std::to_string(cnn_cfg.stride) + ",,," +
                          fmt(report.test->accuracy) + ',' + fmt(report.test->far) + ',' + fmt(report.test->frr)});
      print_metrics(std::cout, *report.test);
      std::cerr << "wall " << report.wall_seconds << " s\n";
      write_run_toml(app, name, dir);
    } else if (sub == c_sweep) {
      const auto dir = out_dir(common, name);
      const auto ds = load_any(common);
      const auto sp = split_dataset(common, ds);
      const auto tr = resample_all(sp.train), te = resample_all(sp.test);
      const auto ks = parse_list<std::size_t>(kernels), ss = parse_list<std::size_t>(strides);
      const auto cells = cnn::sweep(tr, te, ds.num_users(), ks, ss, cnn_cfg, common.jobs);
      auto g = open_out(dir / "sweep.csv");
      cnn::write_sweep_grid_csv(g, cells);
      auto l = open_out(dir / "sweep_long.csv");
      cnn::write_sweep_long_csv(l, cells);
      std::vector<std::string> rows;
      for (const auto& c : cells)
        rows.push_back("cnn," + std::to_string(c.kernel) + ',' + std::to_string(c.stride) + ",,," + fmt(c.report.test->accuracy) +
                       ',' + fmt(c.report.test->far) + ',' + fmt(c.report.test->frr));
      write_summary(dir, rows);
      cnn::write_sweep_grid_csv(std::cout, cells);
      write_run_toml(app, name, dir);
    } else if (sub == c_gan) {
      const auto dir = out_dir(common, name);
      const auto ds = load_any(common);
      const auto sp = split_dataset(common, ds);
      const auto tr = resample_all(sp.train);
      gan::GanTrainOptions opts;
      opts.checkpoint_epochs = parse_list<int>(checkpoints);
      if (opts.checkpoint_epochs.empty()) throw InvalidArgument("--checkpoints must name at least one epoch");
      gan_cfg.epochs = *std::max_element(opts.checkpoint_epochs.begin(), opts.checkpoint_epochs.end());
      opts.on_epoch = [](const gan::EpochCurve& c) { std::cerr << "epoch " << c.epoch << " d " << c.d_loss << " g " << c.g_loss << '\n'; };
      RandomStream stream(common.seed);
      const auto scaler = fit_standardizer(std::span<const FixedSequence>(tr));
      const auto result = gan::train_gan(tr, gan_cfg, scaler, stream, opts);
      auto cf = open_out(dir / "gan_curves.csv");
      cf.precision(10);
      cf << "epoch,d_loss,g_loss,d_accuracy\n";
      for (const auto& c : result.curves) cf << c.epoch << ',' << c.d_loss << ',' << c.g_loss << ',' << c.d_accuracy << '\n';
      auto sf = open_out(dir / "spectral.csv");
      sf.precision(10);
      sf << "epoch,mean_flatness,real_flatness,distance\n";
      const double real_flat = gan::mean_spectral_flatness(tr);
      for (const auto& [epoch, g] : result.checkpoints) {
        auto f = open_out(dir / ("generator_e" + std::to_string(epoch) + ".nn"), true);
        gan::save_generator(f, g, result.model.scaler, epoch);
        RandomStream fs_stream = RandomStream(common.seed).derive(static_cast<std::uint64_t>(epoch));
        const auto fakes = gan::generate(g, result.model.scaler, std::max<std::size_t>(n_export, 1), fs_stream);
        const double flat = gan::mean_spectral_flatness(fakes);
        sf << epoch << ',' << flat << ',' << real_flat << ',' << std::abs(flat - real_flat) << '\n';
        gan::export_csv(dir / ("fakes_e" + std::to_string(epoch)), std::span(fakes).first(n_export));
      }
      write_run_toml(app, name, dir);
    } else if (sub == c_poison) {
      const auto dir = out_dir(common, name);
      const auto ds = load_any(common);
      const auto sp = split_dataset(common, ds);
      const auto tr = resample_all(sp.train), te = resample_all(sp.test);
      const auto ns = parse_list<std::size_t>(n_list);
      const auto es = parse_list<int>(gan_epochs);
      const auto grid = gan::poison_grid(tr, te, ds.num_users(), gan_cfg, ns, es, cnn_cfg, gan::parse_label_policy(policy),
                                         victim, common.jobs, common.seed);
      auto g = open_out(dir / "poison.csv");
      gan::write_poison_grid_csv(g, grid);
      auto l = open_out(dir / "poison_long.csv");
      gan::write_poison_long_csv(l, grid);
      std::vector<std::string> rows = {"cnn," + std::to_string(cnn_cfg.kernel) + ',' + std::to_string(cnn_cfg.stride) + ",,," +
                                       fmt(grid.baseline.accuracy) + ',' + fmt(grid.baseline.far) + ',' + fmt(grid.baseline.frr)};
      for (const auto& c : grid.cells)
        rows.push_back("poison,,," + std::to_string(c.n_adversarial) + ',' + std::to_string(c.gan_epochs) + ',' +
                       fmt(c.poisoned.accuracy) + ',' + fmt(c.poisoned.far) + ',' + fmt(c.poisoned.frr));
      write_summary(dir, rows);
      std::cout << "baseline accuracy " << fmt(grid.baseline_accuracy) << '\n';
      gan::write_poison_grid_csv(std::cout, grid);
      write_run_toml(app, name, dir);
    } else if (sub == c_evade) {
      const auto dir = out_dir(common, name);
      const auto model = cnn::load_model(fs::path(model_path));
      std::vector<FixedSequence> fakes;
      if (!fakes_path.empty()) {
        Common src = common;
        src.data = fakes_path;
        if (fs::is_directory(fakes_path) && !fs::exists(fs::path(fakes_path) / "dataset.tagd")) {
          // a flat directory of CSVs, as written by train-gan
          std::vector<fs::path> files;
          for (const auto& e : fs::directory_iterator(fakes_path))
            if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
          std::sort(files.begin(), files.end());
          if (files.empty()) throw DataError("no .csv files in " + fakes_path);
          for (const auto& f : files) fakes.push_back(resample(parse_csv_file(f, common.layout, 0), model.net.shape().input_length));
        } else {
          for (const auto& s : load_any(src).samples()) fakes.push_back(resample(s, model.net.shape().input_length));
        }
      } else if (!generator_path.empty()) {
        std::ifstream in(generator_path, std::ios::binary);
        if (!in) throw DataError("cannot read " + generator_path);
        const auto g = gan::load_generator(in);
        RandomStream stream(common.seed);
        fakes = gan::generate(g.generator, g.scaler, n_fakes, stream);
      } else {
        throw InvalidArgument("evade needs --fakes or --generator");
      }
      const auto r = gan::evasion_attack(model, fakes, threshold);
      auto f = open_out(dir / "evasion.csv");
      gan::write_evasion_csv(f, r);
      std::cout << "fakes " << r.fakes << "  evasion success (max confident acceptance) " << fmt(r.evasion_success) << '\n';
      write_run_toml(app, name, dir);
    } else if (sub == c_report) {
      const auto dir = out_dir(common, name);
      const auto rows = read_summaries(runs);
      std::vector<std::pair<std::string, std::string>> k1, k2;
      std::vector<double> v1, v2;
      for (const auto& r : rows) {
        if (r.kind == "cnn" && !r.kernel.empty()) {
          k1.emplace_back(r.stride, r.kernel);
          v1.push_back(r.accuracy);
        } else if (r.kind == "poison") {
          k2.emplace_back(r.n_adv, r.gan_epochs);
          v2.push_back(r.accuracy);
        }
      }
      auto t1 = open_out(dir / "table_stride_kernel.csv");
      write_grid(t1, "stride", "kernel_", k1, v1);
      auto t2 = open_out(dir / "table_poisoning.csv");
      write_grid(t2, "adversarial_samples", "epochs_", k2, v2);
      std::cout << "stride x kernel accuracy\n";
      write_grid(std::cout, "stride", "kernel_", k1, v1);
      std::cout << "\npoisoned accuracy (adversarial samples x GAN epochs)\n";
      write_grid(std::cout, "adversarial_samples", "epochs_", k2, v2);
      write_run_toml(app, name, dir);
    }
  } catch (const InvalidArgument& e) {
    std::cerr << "error: code=" << kExitUsage << " kind=usage command=" << name << " message=\"" << e.what() << "\"\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "error: code=" << kExitNumeric << " kind=numeric command=" << name << " message=\"" << e.what() << "\"\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "error: code=" << kExitData << " kind=data command=" << name << " message=\"" << e.what() << "\"\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: code=" << kExitData << " kind=data command=" << name << " message=\"" << e.what() << "\"\n";
    return kExitData;
  }
  return 0;
}
