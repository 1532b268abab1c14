// lnm: command-line driver for the lymph-node metastasis pipeline.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "lnm/config_json.hpp"
#include "lnm/evaluation.hpp"
#include "lnm/experiment.hpp"
#include "lnm/latent_insight.hpp"
#include "lnm/plot.hpp"

namespace fs = std::filesystem;
using namespace lnm;

namespace {

struct Options {
    std::string config_path;
    std::string corpus_dir;
    std::string runs_dir;
    std::string vae_path;
    std::string clf_path;
    std::uint64_t seed = 0;
    bool seed_given = false;
    // synth
    int n_patients = 0;
    std::string out_dir;
    // explain
    int n_examples = 8;
    std::string cam_target = "mu";
    // uncertainty / report
    std::vector<std::string> run_dirs;
    std::string run_dir;
};

/// Timestamped, never reused output directory with a log file.
class RunDir {
 public:
    RunDir(const fs::path& root, const std::string& command) {
        const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        gmtime_r(&now, &tm);
        std::ostringstream stamp;
        stamp << std::put_time(&tm, "%Y%m%dT%H%M%SZ") << '-' << command;
        fs::create_directories(root);
        path_ = root / stamp.str();
        for (int k = 1; fs::exists(path_); ++k) path_ = root / (stamp.str() + "-" + std::to_string(k));
        fs::create_directory(path_);
        log_.open(path_ / "log.txt");
    }

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

    void log(const std::string& line) {
        log_ << line << '\n';
        log_.flush();
        std::cerr << line << '\n';
    }

    std::ofstream open(const std::string& name) {
        std::ofstream out(path_ / name);
        if (!out) throw DataError("cannot write " + (path_ / name).string());
        return out;
    }

 private:
    fs::path path_;
    std::ofstream log_;
};

experiment::ExperimentConfig load(const Options& o) {
    experiment::ExperimentConfig cfg = experiment::phantom_defaults(7);
    if (!o.config_path.empty()) {
        const auto j = config::read_json_file(o.config_path);
        from_json(j, cfg);
    }
    if (o.seed_given) cfg.seed = o.seed;
    if (!o.corpus_dir.empty()) cfg.corpus_path = o.corpus_dir;
    if (!o.runs_dir.empty()) cfg.output_dir = o.runs_dir;
    cfg.validate();
    return cfg.resolved();
}

void snapshot_config(RunDir& run, const experiment::ExperimentConfig& cfg) {
    nlohmann::json j = cfg;
    run.open("config.json") << j.dump(2) << '\n';
    if (cfg.mil.eta_override) run.log("note: eta override in effect (eta = " + std::to_string(cfg.mil.eta) + ")");
}

void write_metrics(RunDir& run, const std::string& name, const std::vector<mil::PredictionTrace>& traces,
                   double threshold) {
    std::vector<int> labels;
    std::vector<double> probs;
    for (const auto& t : traces) {
        labels.push_back(t.label);
        probs.push_back(t.final_prob);
    }
    const auto report = evaluation::compute_metrics(labels, probs, threshold);
    auto out = run.open("metrics.csv");
    evaluation::write_metric_table(out, {{name, report}});
    auto traces_out = run.open("traces.csv");
    mil::write_traces(traces_out, traces);

    const auto roc = evaluation::roc_curve(labels, probs);
    plot::Series curve{{}, {}, {200, 30, 30}};
    for (const auto& p : roc) {
        curve.x.push_back(p.fpr);
        curve.y.push_back(p.tpr);
    }
    plot::Series chance{{0.0, 1.0}, {0.0, 1.0}, {160, 160, 160}};
    plot::write_ppm(plot::line_chart({chance, curve}, 320, 320, true), run / "roc.ppm");
    run.log(name + " AUC " + (report.auc ? std::to_string(*report.auc) : std::string("undefined")) + " sens " +
            std::to_string(report.sensitivity) + " spec " + std::to_string(report.specificity));
}

void write_reconstruction(RunDir& run, const std::vector<std::pair<std::string, vae::ReconstructionMetrics>>& rows) {
    auto out = run.open("reconstruction.csv");
    out << "split,ssim,psnr,mse,mae,count\n" << std::setprecision(8);
    for (const auto& [name, m] : rows) {
        out << name << ',' << m.ssim << ',' << m.psnr << ',' << m.mse << ',' << m.mae << ',' << m.count << '\n';
        run.log(name + " SSIM " + std::to_string(m.ssim) + " PSNR " + std::to_string(m.psnr));
    }
}

void write_recon_grid(RunDir& run, vae::VariationalAutoencoder& model, const std::vector<PatchRecord>& patches) {
    std::vector<Image> images;
    for (size_t i = 0; i < patches.size() && i < 8; ++i) images.push_back(patches[i].image);
    const size_t n = images.size();
    for (size_t i = 0; i < n; ++i) images.push_back(vae::reconstruct(model, images[i]));
    if (!images.empty()) plot::write_ppm(plot::image_grid(images, int(n)), run / "reconstruction_grid.ppm");
}

int cmd_synth(const Options& o) {
    auto cfg = load(o);
    if (o.out_dir.empty()) throw ConfigError("synth: --out is required");
    PhantomSpec spec = cfg.phantom;
    if (o.n_patients > 0) spec.n_patients = o.n_patients;
    if (o.seed_given) spec.seed = o.seed;
    spec.validate();
    if (fs::exists(fs::path(o.out_dir) / "manifest.json")) {
        throw DataError("synth: " + o.out_dir + " already holds a corpus; refusing to overwrite");
    }
    RunDir run(cfg.output_dir, "synth");
    nlohmann::json j = spec;
    run.open("phantom_spec.json") << j.dump(2) << '\n';
    const auto corpus = generate_phantom_corpus(spec);
    save_corpus(corpus, o.out_dir);

    std::vector<morphometry::FeatureRow> rows;
    for (const auto& b : corpus.bags) {
        for (const auto& p : b.patches) {
            if (!p.is_padding) rows.push_back({b.patient_id, p.node_id, p.slice_index,
                                               morphometry::node_features(p.mask, corpus.manifest.spacing)});
        }
    }
    std::vector<morphometry::LabeledFeatures> train_rows;
    for (const auto& r : rows) {
        if (corpus.manifest.split.at(r.patient_id) == Split::Train) train_rows.push_back({r.patient_id, r.features.raw()});
    }
    const auto scaler = morphometry::fit_scaler(train_rows);
    for (auto& r : rows) morphometry::apply_scaler(r.features, scaler);
    auto features = run.open("features.csv");
    morphometry::write_feature_table(features, rows);
    run.log("wrote " + std::to_string(corpus.bags.size()) + " patients (" + std::to_string(corpus.manifest.n_positive) +
            " positive) to " + o.out_dir);
    return 0;
}

int cmd_train_vae(const Options& o) {
    auto cfg = load(o);
    RunDir run(cfg.output_dir, "train-vae");
    snapshot_config(run, cfg);
    const auto corpus = experiment::obtain_corpus(cfg);
    const auto train = vae::real_patches(corpus.split_bags(Split::Train));
    const auto test = vae::real_patches(corpus.split_bags(Split::Test));
    auto result = vae::train_vae(train, test, cfg.vae, cfg.loss, [&](const vae::EpochRecord& e) {
        run.log("epoch " + std::to_string(e.epoch) + " loss " + std::to_string(e.train_loss) + " test SSIM " +
                std::to_string(e.test_ssim));
    });
    vae::save_checkpoint(result.best, run / "vae.ckpt");
    auto history = run.open("history.csv");
    vae::write_history(history, result.history);

    plot::Series train_ssim{{}, {}, {30, 30, 200}}, test_ssim{{}, {}, {200, 30, 30}};
    for (const auto& h : result.history) {
        train_ssim.x.push_back(h.epoch);
        train_ssim.y.push_back(h.train_ssim);
        test_ssim.x.push_back(h.epoch);
        test_ssim.y.push_back(h.test_ssim);
    }
    plot::write_ppm(plot::line_chart({train_ssim, test_ssim}), run / "ssim_curves.ppm");
    plot::Series loss{{}, {}, {0, 0, 0}};
    for (const auto& h : result.history) {
        loss.x.push_back(h.epoch);
        loss.y.push_back(h.train_loss);
    }
    plot::write_ppm(plot::line_chart({loss}), run / "loss_curve.ppm");

    auto& model = result.best.model;
    write_reconstruction(run, {{"train", vae::reconstruction_report(model, train)},
                               {"test", vae::reconstruction_report(model, test)}});
    write_recon_grid(run, model, test);
    run.log("best epoch " + std::to_string(result.best.epoch) + (result.stopped_early ? " (stopped early)" : ""));
    return 0;
}

vae::Checkpoint require_vae(const Options& o) {
    if (o.vae_path.empty()) throw ConfigError("--vae checkpoint is required");
    return vae::load_checkpoint(o.vae_path);
}

int cmd_train_clf(const Options& o) {
    auto cfg = load(o);
    auto ckpt = require_vae(o);
    RunDir run(cfg.output_dir, "train-clf");
    snapshot_config(run, cfg);
    const auto corpus = experiment::obtain_corpus(cfg);
    auto splits = experiment::encode_splits(ckpt.model, corpus, cfg.mil);
    auto clf = mil::train_classifier(splits.train, splits.test, splits.latent_dim, cfg.mil);
    mil::save_classifier(clf, run / "classifier.bin");
    auto history = run.open("classifier_history.csv");
    mil::write_classifier_history(history, clf.history);

    plot::Series train_auc{{}, {}, {30, 30, 200}}, test_auc{{}, {}, {200, 30, 30}};
    for (const auto& h : clf.history) {
        train_auc.x.push_back(h.epoch);
        train_auc.y.push_back(h.train_auc);
        test_auc.x.push_back(h.epoch);
        test_auc.y.push_back(h.test_auc);
    }
    plot::write_ppm(plot::line_chart({train_auc, test_auc}), run / "auc_curves.ppm");

    fs::create_directory(run / "states");
    for (const auto& s : clf.states) {
        std::ofstream out(run / "states" / ("epoch" + std::to_string(s.epoch) + ".csv"));
        mil::write_traces(out, s.traces);
    }
    run.log(std::to_string(clf.states.size()) + " model states reached the saved-state AUC threshold");
    write_metrics(run, "test", mil::predict(clf, splits.test), cfg.mil.threshold);
    return 0;
}

int cmd_evaluate(const Options& o) {
    auto cfg = load(o);
    auto ckpt = require_vae(o);
    RunDir run(cfg.output_dir, "evaluate");
    snapshot_config(run, cfg);
    const auto corpus = experiment::obtain_corpus(cfg);
    const auto train = vae::real_patches(corpus.split_bags(Split::Train));
    const auto test = vae::real_patches(corpus.split_bags(Split::Test));
    write_reconstruction(run, {{"train", vae::reconstruction_report(ckpt.model, train)},
                               {"test", vae::reconstruction_report(ckpt.model, test)}});
    write_recon_grid(run, ckpt.model, test);
    if (!o.clf_path.empty()) {
        auto clf = mil::load_classifier(o.clf_path);
        if (clf.model->latent_dim() != ckpt.model->architecture().latent_dim) {
            throw DataError("classifier latent size does not match the VAE checkpoint");
        }
        const auto test_enc = mil::encode_bags(ckpt.model, corpus.split_bags(Split::Test), corpus.manifest.spacing,
                                               clf.model->config().max_patches);
        write_metrics(run, "test", mil::predict(clf, test_enc), clf.model->config().threshold);
    }
    return 0;
}

int cmd_cv(const Options& o) {
    auto cfg = load(o);
    RunDir run(cfg.output_dir, "cv");
    snapshot_config(run, cfg);
    const auto corpus = experiment::obtain_corpus(cfg);
    const auto result = evaluation::run_nested_cv(corpus, cfg.cv, cfg.vae, cfg.loss, cfg.mil,
                                                  derive_seed(cfg.seed, "cv"),
                                                  [&](const std::string& s) { run.log(s); });
    auto folds = run.open("folds.csv");
    evaluation::write_fold_reports(folds, result);
    for (const auto& f : result.folds) {
        auto v = run.open("fold" + std::to_string(f.fold) + "_vae_ledger.csv");
        evaluation::write_search_ledger(v, f.vae_runs);
        auto m = run.open("fold" + std::to_string(f.fold) + "_mlp_ledger.csv");
        evaluation::write_search_ledger(m, f.mil_runs);
        auto t = run.open("fold" + std::to_string(f.fold) + "_traces.csv");
        mil::write_traces(t, f.traces);
    }
    for (const auto& col : evaluation::metric_columns()) {
        if (!result.summary.mean.count(col)) continue;
        run.log(col + " " + std::to_string(result.summary.mean.at(col)) + " +/- " +
                std::to_string(result.summary.sd.at(col)));
    }
    return 0;
}

int cmd_ablate(const Options& o) {
    auto cfg = load(o);
    auto ckpt = require_vae(o);
    RunDir run(cfg.output_dir, "ablate");
    snapshot_config(run, cfg);
    const auto corpus = experiment::obtain_corpus(cfg);
    auto splits = experiment::encode_splits(ckpt.model, corpus, cfg.mil);
    const auto rows = evaluation::run_ablation(splits.train, splits.test, splits.latent_dim, cfg.mil,
                                               evaluation::standard_ablations(),
                                               [&](const std::string& s) { run.log(s); });
    std::vector<std::pair<std::string, evaluation::MetricReport>> table;
    for (const auto& r : rows) table.emplace_back(r.name, r.report);
    auto out = run.open("ablation.csv");
    evaluation::write_metric_table(out, table);
    return 0;
}

int cmd_explain(const Options& o) {
    auto cfg = load(o);
    auto ckpt = require_vae(o);
    auto& model = ckpt.model;
    RunDir run(cfg.output_dir, "explain");
    snapshot_config(run, cfg);
    const auto corpus = experiment::obtain_corpus(cfg);
    const auto train_bags = corpus.split_bags(Split::Train);
    const auto test_bags = corpus.split_bags(Split::Test);
    const auto& spacing = corpus.manifest.spacing;

    auto test_table = experiment::latent_table(model, test_bags, spacing);
    std::vector<insight::CamScore> scores;
    if (o.cam_target == "node") {
        if (o.clf_path.empty()) throw ConfigError("--cam-target node requires --clf");
        auto clf = mil::load_classifier(o.clf_path);
        scores = experiment::node_logit_scores(clf, model, test_bags, spacing);
    } else {
        const auto target = o.cam_target == "recon" ? insight::CamTarget::ReconstructionError : insight::CamTarget::MuSquaredNorm;
        scores.assign(test_table.patches.size(), [&model, target](const vae::EncoderOutput& enc, const torch::Tensor& x) {
            return target == insight::CamTarget::MuSquaredNorm ? enc.mu.pow(2).sum() : (model->decode(enc.mu) - x).abs().mean();
        });
    }
    run.log("Grad-CAM target: " + o.cam_target);
    const auto loc = experiment::grad_cam_localization(model, test_table.patches, scores);
    {
        auto out = run.open("gradcam.csv");
        out << "patient_id,node_id,slice_index,mass_inside_box\n";
        for (size_t i = 0; i < test_table.patches.size(); ++i) {
            const auto* p = test_table.patches[i];
            out << p->patient_id << ',' << p->node_id << ',' << p->slice_index << ',' << loc.mass_inside[i] << '\n';
        }
    }
    std::vector<Image> cam_images;
    for (int i = 0; i < o.n_examples && i < int(test_table.patches.size()); ++i) {
        const auto& patch = *test_table.patches[size_t(i)];
        const auto h = insight::grad_cam(model, patch.image, scores[size_t(i)]);
        Image top(kPatchSize, kPatchSize, 0.0f);
        for (size_t k = 0; k < top.size(); ++k) top.values()[k] = h.top.values()[k];
        cam_images.push_back(patch.image);
        cam_images.push_back(h.values);
        cam_images.push_back(top);
        plot::write_pgm(h.values, run / ("heatmap_" + std::to_string(i) + ".pgm"));
    }
    if (!cam_images.empty()) plot::write_ppm(plot::image_grid(cam_images, 3), run / "gradcam_grid.ppm");
    run.log("grad-cam: " + std::to_string(loc.above_baseline) + "/" + std::to_string(loc.n) +
            " patches put more than 25% of the mass inside the node box");

    auto all_bags = train_bags;
    all_bags.insert(all_bags.end(), test_bags.begin(), test_bags.end());
    const auto all_table = experiment::latent_table(model, all_bags, spacing);
    const int k_max = std::min<int>(cfg.insight.k_max, int(all_table.latents.size()));
    const auto clusters = insight::cluster_latents(all_table.latents, all_table.features, cfg.insight.k_min, k_max,
                                                   derive_seed(cfg.seed, "clusters"), cfg.insight.restarts);
    auto cluster_out = run.open("clusters.csv");
    insight::write_cluster_report(cluster_out, clusters);
    run.log("clusters: k=" + std::to_string(clusters.k) + " global short-axis sd " +
            std::to_string(clusters.global.short_axis.sd) + " mean intra-cluster sd " +
            std::to_string(clusters.mean_sd_short));

    const auto train_table = experiment::latent_table(model, train_bags, spacing);
    std::vector<double> sizes;
    for (const auto& f : train_table.features) sizes.push_back(f.short_axis_mm);
    auto direction = insight::growth_direction(train_table.latents, sizes, cfg.insight.small_pct, cfg.insight.large_pct);
    direction.multiples = cfg.insight.multiples;
    const auto traversal = experiment::traversal_monotonicity(model, direction, test_table.latents);
    {
        auto out = run.open("traversal.csv");
        out << "patient_id,node_id,monotone,areas\n";
        for (size_t i = 0; i < traversal.areas.size(); ++i) {
            const auto* p = test_table.patches[i];
            out << p->patient_id << ',' << p->node_id << ',' << int(insight::nondecreasing(traversal.areas[i])) << ',';
            for (size_t m = 0; m < traversal.areas[i].size(); ++m) out << (m ? ";" : "") << traversal.areas[i][m];
            out << '\n';
        }
    }
    std::vector<Image> strips;
    for (int i = 0; i < o.n_examples && i < int(test_table.latents.size()); ++i) {
        auto strip = insight::render_traversal(model, test_table.latents[size_t(i)], direction.direction,
                                               direction.multiples);
        strips.insert(strips.end(), strip.begin(), strip.end());
    }
    if (!strips.empty()) {
        plot::write_ppm(plot::image_grid(strips, int(direction.multiples.size())), run / "traversal_strips.ppm");
    }
    run.log("traversal: " + std::to_string(traversal.monotone) + "/" + std::to_string(traversal.n) +
            " decoded node areas nondecreasing along the growth direction");
    return 0;
}

std::vector<fs::path> state_files(const fs::path& dir) {
    std::vector<fs::path> files;
    if (!fs::exists(dir)) throw DataError("missing run directory " + dir.string());
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().parent_path().filename() == "states" && e.path().extension() == ".csv") {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

int cmd_uncertainty(const Options& o) {
    auto cfg = load(o);
    if (o.run_dirs.empty()) throw ConfigError("uncertainty: --runs is required");
    std::vector<std::vector<mil::PredictionTrace>> states;
    for (const auto& d : o.run_dirs) {
        for (const auto& f : state_files(d)) {
            std::ifstream in(f);
            states.push_back(mil::read_traces(in));
        }
    }
    RunDir run(cfg.output_dir, "uncertainty");
    const auto ledger = evaluation::accumulate_uncertainty(states, cfg.mil.threshold);
    auto out = run.open("uncertainty.csv");
    evaluation::write_uncertainty(out, ledger);
    run.log(std::to_string(ledger.n_states) + " states; " + std::to_string(ledger.difficult_count()) +
            " difficult patients; " + std::to_string(ledger.uncertain_count()) + " uncertain of " +
            std::to_string(ledger.entries.size()));
    return 0;
}

int cmd_report(const Options& o) {
    if (o.run_dir.empty()) throw ConfigError("report: --run is required");
    const fs::path dir(o.run_dir);
    if (!fs::exists(dir)) throw DataError("missing run directory " + dir.string());
    bool any = false;
    for (const char* name : {"metrics.csv", "ablation.csv", "folds.csv", "reconstruction.csv", "clusters.csv",
                             "uncertainty.csv"}) {
        const auto p = dir / name;
        if (!fs::exists(p)) continue;
        any = true;
        std::ifstream in(p);
        std::cout << "== " << name << '\n' << in.rdbuf() << '\n';
    }
    if (!any && fs::exists(dir / "traces.csv")) {
        std::ifstream in(dir / "traces.csv");
        const auto traces = mil::read_traces(in);
        std::vector<int> labels;
        std::vector<double> probs;
        for (const auto& t : traces) {
            labels.push_back(t.label);
            probs.push_back(t.final_prob);
        }
        const auto threshold = experiment::phantom_defaults(7).mil.threshold;
        evaluation::write_metric_table(std::cout, {{"test", evaluation::compute_metrics(labels, probs, threshold)}});
        any = true;
    }
    if (!any) throw DataError("report: no metric artifacts in " + dir.string());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lymph-node metastasis prediction pipeline on phantom data"};
    app.require_subcommand(1);
    Options o;
    auto seed_opt = [&](CLI::App* sub) {
        sub->add_option_function<std::uint64_t>(
            "--seed", [&](std::uint64_t s) { o.seed = s, o.seed_given = true; }, "Global seed");
    };
    auto common = [&](CLI::App* sub, bool needs_vae) {
        sub->add_option("--config", o.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
        sub->add_option("--corpus", o.corpus_dir, "Corpus directory (default: generate the phantom)");
        sub->add_option("--runs", o.runs_dir, "Root of the run directories");
        seed_opt(sub);
        if (needs_vae) sub->add_option("--vae", o.vae_path, "VAE checkpoint")->required()->check(CLI::ExistingFile);
    };

    auto* synth = app.add_subcommand("synth", "Generate a phantom corpus");
    synth->add_option("--n", o.n_patients, "Number of patients");
    synth->add_option("--out", o.out_dir, "Output corpus directory")->required();
    synth->add_option("--config", o.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
    synth->add_option("--runs", o.runs_dir, "Root of the run directories");
    seed_opt(synth);

    auto* train_vae = app.add_subcommand("train-vae", "Train the patch VAE");
    common(train_vae, false);
    auto* train_clf = app.add_subcommand("train-clf", "Train the two-stage MIL classifier on frozen VAE features");
    common(train_clf, true);
    auto* evaluate = app.add_subcommand("evaluate", "Reconstruction and classification metrics on the test split");
    common(evaluate, true);
    evaluate->add_option("--clf", o.clf_path, "Classifier model")->check(CLI::ExistingFile);
    auto* cv = app.add_subcommand("cv", "Nested five-fold cross-validation");
    common(cv, false);
    auto* ablate = app.add_subcommand("ablate", "Ablation table of feature sources and aggregations");
    common(ablate, true);
    auto* explain = app.add_subcommand("explain", "Grad-CAM, latent clusters and growth traversal");
    common(explain, true);
    explain->add_option("--examples", o.n_examples, "Number of patches rendered to images");
    explain->add_option("--cam-target", o.cam_target, "Grad-CAM target: mu (squared norm), recon or node (needs --clf)")
        ->check(CLI::IsMember({"mu", "recon", "node"}));
    explain->add_option("--clf", o.clf_path, "Classifier model for the node target")->check(CLI::ExistingFile);
    auto* uncertainty = app.add_subcommand("uncertainty", "Accumulate predictions across saved model states");
    uncertainty->add_option("--runs", o.run_dirs, "Run directories holding states/")->required();
    uncertainty->add_option("--config", o.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
    uncertainty->add_option("--out", o.runs_dir, "Root of the run directories");
    auto* report = app.add_subcommand("report", "Print the metric tables of a run directory");
    report->add_option("--run", o.run_dir, "Run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "lnm: " << e.what() << '\n';
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(o);
        if (train_vae->parsed()) return cmd_train_vae(o);
        if (train_clf->parsed()) return cmd_train_clf(o);
        if (evaluate->parsed()) return cmd_evaluate(o);
        if (cv->parsed()) return cmd_cv(o);
        if (ablate->parsed()) return cmd_ablate(o);
        if (explain->parsed()) return cmd_explain(o);
        if (uncertainty->parsed()) return cmd_uncertainty(o);
        if (report->parsed()) return cmd_report(o);
    } catch (const Error& e) {
        std::cerr << "lnm: " << e.what() << '\n';
        return e.exit_code();
    } catch (const fs::filesystem_error& e) {
        std::cerr << "lnm: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "lnm: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
