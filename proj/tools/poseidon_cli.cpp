// poseidon: command-line front end for the catalog → labels → training → evaluation pipeline.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "poseidon/catalog.hpp"
#include "poseidon/config.hpp"
#include "poseidon/dataset.hpp"
#include "poseidon/eval.hpp"
#include "poseidon/model.hpp"
#include "poseidon/physics.hpp"
#include "poseidon/synthgen.hpp"
#include "poseidon/train.hpp"

namespace fs = std::filesystem;
using namespace poseidon;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Exit { kOk = 0, kUsage = 1, kIo = 2, kConfig = 3, kNumerical = 4 };

bool g_verbose = false;

void log(const std::string& msg) {
    if (g_verbose) std::cerr << "[poseidon] " << msg << '\n';
}

/// Run timestamp: SOURCE_DATE_EPOCH when set (reproducible manifests), else the wall clock.
double now_seconds() {
    if (const char* s = std::getenv("SOURCE_DATE_EPOCH")) {
        try {
            return std::stod(s);
        } catch (const std::exception&) {
            throw config_error("SOURCE_DATE_EPOCH is not a number");
        }
    }
    using namespace std::chrono;
    return duration<double>(system_clock::now().time_since_epoch()).count();
}

std::size_t worker_count() {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* s = std::getenv("POSEIDON_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(s, &end, 10);
        if (end == s || *end != '\0' || v < 1) throw config_error("POSEIDON_THREADS must be a positive integer");
        n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
    }
    return n;
}

/// Writes via a temporary sibling and renames, so readers never see a partial file.
template <class Fn>
void atomic_write(const fs::path& path, Fn&& fill) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw io_error("cannot write '" + path.string() + "'");
        fill(out);
        if (!out) throw io_error("write failed for '" + path.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw io_error("cannot move '" + tmp.string() + "' into place: " + ec.message());
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw io_error("cannot create output directory '" + dir.string() + "'");
}

void require_file(const std::string& path) {
    if (!fs::is_regular_file(path)) throw io_error("no such file: '" + path + "'");
}

struct Common {
    std::string config_path;
    std::uint64_t seed = 1;
    std::string out;
};

struct Manifest {
    std::string subcommand;
    const Common* common = nullptr;
    std::vector<std::string> inputs, outputs;
    double start = 0;

    void write(const fs::path& path) {
        for (const auto& o : outputs)
            if (!fs::exists(o)) throw io_error("manifest names a missing artifact '" + o + "'");
        nlohmann::ordered_json j;
        j["subcommand"] = subcommand;
        j["tool_version"] = kVersion;
        j["config"] = common->config_path;
        j["seed"] = common->seed;
        j["inputs"] = inputs;
        j["outputs"] = outputs;
        j["start"] = catalog::format_time(start);
        j["end"] = catalog::format_time(now_seconds());
        atomic_write(path, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
    }
};

config::RunConfig load_config(const Common& c) {
    config::RunConfig rc;
    if (!c.config_path.empty()) {
        require_file(c.config_path);
        rc = config::load(c.config_path);
    }
    rc.synth.seed = c.seed;
    rc.train.seed = c.seed;
    return rc;
}

catalog::Catalog read_catalog(const std::string& path, double m_c, catalog::ParseReport* report = nullptr) {
    require_file(path);
    catalog::ParseReport local;
    auto cat = catalog::parse_catalog(path, {}, report ? report : &local, m_c);
    const auto& r = report ? *report : local;
    log("read " + std::to_string(cat.size()) + " events from " + path + " (" + std::to_string(r.rows_dropped) +
        " rows dropped)");
    return cat;
}

data::Dataset make_dataset(const catalog::Catalog& cat, config::RunConfig& rc) {
    if (rc.grid.fit_to_catalog) {
        rc.grid.spec = data::fit_grid(cat, rc.grid.spec.cell_size);
        rc.grid.fit_to_catalog = false;
    }
    data::DatasetConfig dc{rc.labels, rc.features, rc.grid.spec, worker_count()};
    auto ds = data::build_dataset(cat, dc);
    log("dataset: " + std::to_string(ds.size()) + " samples on a " + std::to_string(rc.grid.spec.rows()) + "x" +
        std::to_string(rc.grid.spec.cols()) + " grid");
    return ds;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// ---------------------------------------------------------------------------

int cmd_ingest(const Common& c, const std::string& input, const catalog::QualityCriteria& q, double m_c) {
    Manifest man{"ingest", &c, {input}, {}, now_seconds()};
    const fs::path dir = c.out.empty() ? fs::path(".") : fs::path(c.out);
    ensure_dir(dir);
    catalog::ParseReport pr;
    const auto cat = read_catalog(input, m_c, &pr);
    catalog::FilterReport fr;
    const auto kept = catalog::filter_quality(cat, q, &fr);
    const auto out_cat = dir / "catalog.csv", out_rep = dir / "ingest_report.txt";
    atomic_write(out_cat, [&](std::ostream& o) { catalog::write_catalog(o, kept); });
    atomic_write(out_rep, [&](std::ostream& o) {
        o << "[parse]\nrows_read = " << pr.rows_read << "\nrows_dropped = " << pr.rows_dropped << '\n';
        for (const auto& [why, n] : pr.drop_reasons) o << "dropped." << why << " = " << n << '\n';
        o << "\n[quality]\npassed = " << fr.passed << "\nfailed = " << fr.failed
          << "\nmissing_quality = " << fr.missing_quality << "\n\n[warnings]\n";
        for (const auto& w : pr.warnings) o << w << '\n';
        for (const auto& w : fr.warnings) o << w << '\n';
    });
    man.outputs = {out_cat.string(), out_rep.string()};
    man.write(dir / "manifest.json");
    return kOk;
}

int cmd_synth(const Common& c, const std::vector<std::pair<const char*, double>>& overrides, long mainshocks) {
    auto rc = load_config(c);
    for (const auto& [key, v] : overrides) {
        const std::string k = key;
        if (k == "b") rc.synth.b_true = v;
        else if (k == "p") rc.synth.p_true = v;
        else if (k == "c") rc.synth.c_true = v;
        else if (k == "bath-dm") rc.synth.bath_dm = v;
        else if (k == "productivity") rc.synth.aftershock_productivity = v;
    }
    if (mainshocks >= 0) rc.synth.n_mainshocks = static_cast<std::size_t>(mainshocks);
    if (c.out.empty()) throw invalid_input("synth: --out <catalog file> is required");
    const fs::path out = c.out;
    if (out.has_parent_path()) ensure_dir(out.parent_path());
    Manifest man{"synth", &c, {}, {}, now_seconds()};
    if (!c.config_path.empty()) man.inputs.push_back(c.config_path);
    const auto g = synth::generate_catalog(rc.synth);
    log("generated " + std::to_string(g.catalog.size()) + " events");
    const fs::path stem = out.parent_path() / out.stem();
    const fs::path log_path = stem.string() + ".log.csv", man_path = stem.string() + ".manifest.json";
    atomic_write(out, [&](std::ostream& o) { catalog::write_catalog(o, g.catalog); });
    atomic_write(log_path, [&](std::ostream& o) { synth::write_log(o, g.log); });
    man.outputs = {out.string(), log_path.string()};
    man.write(man_path);
    return kOk;
}

int cmd_label(const Common& c, const std::string& input) {
    auto rc = load_config(c);
    Manifest man{"label", &c, {input}, {}, now_seconds()};
    const fs::path dir = c.out.empty() ? fs::path(".") : fs::path(c.out);
    ensure_dir(dir);
    const auto cat = read_catalog(input, rc.physics.magnitude_completeness);
    const auto ds = make_dataset(cat, rc);
    const auto samples = dir / "samples.csv", feats = dir / "features.csv", prev = dir / "prevalence.txt";
    atomic_write(samples, [&](std::ostream& o) {
        o << "id,aftershock,tsunami,foreshock,weight\n";
        for (const auto& s : ds.samples)
            o << catalog::detail::quote_if_needed(cat[s.trigger_index].id) << ',' << s.label_aftershock << ','
              << s.label_tsunami << ',' << s.label_foreshock << ',' << s.sample_weight << '\n';
    });
    atomic_write(feats, [&](std::ostream& o) {
        for (std::size_t j = 0; j < features::kDim; ++j) o << (j ? "," : "") << 'x' << j;
        o << '\n';
        for (const auto& r : ds.features) {
            for (std::size_t j = 0; j < features::kDim; ++j) o << (j ? "," : "") << catalog::format_g6(r[j]);
            o << '\n';
        }
    });
    const auto p = labeling::prevalence(ds.samples);
    atomic_write(prev, [&](std::ostream& o) {
        o << "samples = " << p.n << "\naftershock = " << fmt("%.6f", p.aftershock)
          << "\nforeshock = " << fmt("%.6f", p.foreshock) << "\ntsunami = " << fmt("%.6f", p.tsunami) << '\n';
    });
    man.outputs = {samples.string(), feats.string(), prev.string()};
    man.write(dir / "manifest.json");
    return kOk;
}

int cmd_train(const Common& c, const std::string& data_path) {
    auto rc = load_config(c);
    Manifest man{"train", &c, {}, {}, now_seconds()};
    if (!c.config_path.empty()) man.inputs.push_back(c.config_path);
    const fs::path dir = c.out.empty() ? fs::path(".") : fs::path(c.out);
    ensure_dir(dir);
    catalog::Catalog cat;
    if (data_path.empty()) {
        cat = synth::generate_catalog(rc.synth).catalog;
        rc.physics.magnitude_completeness = rc.synth.m_min;
        log("training on a synthetic catalog of " + std::to_string(cat.size()) + " events");
    } else {
        man.inputs.push_back(data_path);
        cat = read_catalog(data_path, rc.physics.magnitude_completeness);
    }
    const auto ds = make_dataset(cat, rc);
    auto init = model::init_params(data::model_config_for(ds, rc.model), c.seed);
    const auto res = train::train_two_stage(ds, std::move(init), rc.train, rc.loss, [](const train::EpochRecord& r) {
        log("epoch " + std::to_string(r.epoch) + " stage " + std::to_string(r.stage) + " objective " +
            fmt("%.5f", r.train_objective) + " val auc(a/t/f) " + fmt("%.3f", r.val_aftershock.auc) + "/" +
            fmt("%.3f", r.val_tsunami.auc) + "/" + fmt("%.3f", r.val_foreshock.auc));
    });
    const auto ckpt = dir / "model.ckpt", hist = dir / "history.csv";
    atomic_write(ckpt, [&](std::ostream& o) {
        model::write_checkpoint(o, res.params, config::to_ini(rc, {"labels", "features", "grid", "physics"}));
    });
    atomic_write(hist, [&](std::ostream& o) { train::write_history(o, res.history); });
    man.outputs = {ckpt.string(), hist.string()};
    man.write(dir / "manifest.json");
    return kOk;
}

struct Evaluated {
    train::Predictions pred;
    std::vector<std::size_t> indices;
};

Evaluated evaluate(const std::string& ckpt_path, const std::string& data_path, const std::string& split,
                   model::ModelParams& params) {
    require_file(ckpt_path);
    auto ck = model::load_checkpoint(ckpt_path);
    params = ck.params;
    auto rc = config::from_checkpoint_header(ck.header);
    const auto cat = read_catalog(data_path, rc.physics.magnitude_completeness);
    const auto ds = make_dataset(cat, rc);
    if (ds.size() == 0) throw invalid_input("no labeled samples in '" + data_path + "'");
    Evaluated ev;
    if (split == "val") {
        ev.indices = data::temporal_split(ds, 0.2).second;
    } else {
        ev.indices.resize(ds.size());
        for (std::size_t i = 0; i < ds.size(); ++i) ev.indices[i] = i;
    }
    if (data::model_config_for(ds, params.config).grid_rows != params.config.grid_rows ||
        data::model_config_for(ds, params.config).grid_cols != params.config.grid_cols)
        throw invalid_input("data grid does not match the checkpoint's encoder input");
    ev.pred = train::predict(params, ds, ev.indices);
    return ev;
}

struct TaskView {
    const char* name;
    const std::vector<double>* scores;
    const std::vector<double>* labels;
};

std::vector<TaskView> tasks(const train::Predictions& p) {
    return {{"aftershock", &p.aftershock, &p.y_aftershock},
            {"tsunami", &p.tsunami, &p.y_tsunami},
            {"foreshock", &p.foreshock, &p.y_foreshock}};
}

int cmd_eval(const Common& c, const std::string& ckpt, const std::string& data_path, const std::string& split,
             bool best_threshold, const std::string& anomaly) {
    Manifest man{"eval", &c, {ckpt, data_path}, {}, now_seconds()};
    const fs::path dir = c.out.empty() ? fs::path(".") : fs::path(c.out);
    ensure_dir(dir);
    model::ModelParams params;
    const auto ev = evaluate(ckpt, data_path, split, params);
    const auto& p = ev.pred;
    const auto out = dir / "metrics.txt";
    atomic_write(out, [&](std::ostream& o) {
        o << "samples = " << ev.indices.size() << "\nsplit = " << split << "\n\n";
        for (const auto& t : tasks(p)) {
            auto m = best_threshold ? eval::best_f1(*t.scores, *t.labels) : eval::confusion_metrics(*t.scores, *t.labels);
            const auto full = eval::task_metrics(*t.scores, *t.labels, m.threshold);
            m.auc = full.auc;
            eval::write_metrics(o, t.name, m);
        }
        const auto* anom = anomaly == "aftershock" ? &p.y_aftershock
                           : anomaly == "foreshock" ? &p.y_foreshock
                                                    : &p.y_tsunami;
        eval::write_energy_report(o, eval::energy_separation(p.energy, *anom));
    });
    man.outputs = {out.string()};
    man.write(dir / "manifest.json");
    return kOk;
}

int cmd_export_roc(const Common& c, const std::string& ckpt, const std::string& data_path, const std::string& split) {
    Manifest man{"export-roc", &c, {ckpt, data_path}, {}, now_seconds()};
    const fs::path dir = c.out.empty() ? fs::path(".") : fs::path(c.out);
    ensure_dir(dir);
    model::ModelParams params;
    const auto ev = evaluate(ckpt, data_path, split, params);
    for (const auto& t : tasks(ev.pred)) {
        const auto path = dir / (std::string("roc_") + t.name + ".csv");
        try {
            const auto r = eval::roc_auc(*t.scores, *t.labels);
            atomic_write(path, [&](std::ostream& o) { eval::write_roc(o, r.points); });
            man.outputs.push_back(path.string());
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::Estimation) throw;
            std::cerr << "poseidon: skipping " << t.name << ": " << e.what() << '\n';
        }
    }
    man.write(dir / "manifest.json");
    return kOk;
}

int cmd_export_history(const Common& c, const std::string& history) {
    require_file(history);
    Manifest man{"export-history", &c, {history}, {}, now_seconds()};
    const fs::path dir = c.out.empty() ? fs::path(".") : fs::path(c.out);
    ensure_dir(dir);
    std::ifstream in(history);
    std::string line;
    std::getline(in, line);
    const auto header = catalog::detail::split_csv_line(line);
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line))
        if (!line.empty()) rows.push_back(catalog::detail::split_csv_line(line));
    auto project = [&](const fs::path& path, const std::vector<std::string>& cols) {
        std::vector<std::size_t> idx;
        for (const auto& col : cols) {
            const auto it = std::find(header.begin(), header.end(), col);
            if (it == header.end()) throw io_error("history file lacks column '" + col + "'");
            idx.push_back(static_cast<std::size_t>(it - header.begin()));
        }
        atomic_write(path, [&](std::ostream& o) {
            for (std::size_t k = 0; k < cols.size(); ++k) o << (k ? "," : "") << cols[k];
            o << '\n';
            for (const auto& r : rows) {
                for (std::size_t k = 0; k < idx.size(); ++k) {
                    if (idx[k] >= r.size()) throw io_error("short row in history file");
                    o << (k ? "," : "") << r[idx[k]];
                }
                o << '\n';
            }
        });
        man.outputs.push_back(path.string());
    };
    project(dir / "loss_curves.csv", {"epoch", "stage", "stage_epoch", "lr", "task_aftershock", "task_tsunami",
                                      "task_foreshock", "gr", "omori", "bath", "contrastive", "energy_reg", "total",
                                      "train_objective"});
    project(dir / "physics_trajectory.csv", {"epoch", "stage", "stage_epoch", "b", "p", "c", "delta_m"});
    project(dir / "validation.csv", {"epoch", "stage", "val_auc_aftershock", "val_auc_tsunami", "val_auc_foreshock",
                                     "val_f1_aftershock", "val_f1_tsunami", "val_f1_foreshock"});
    man.write(dir / "manifest.json");
    return kOk;
}

int cmd_fit_physics(const Common& c, const std::string& input, std::string log_path, double m_c_flag) {
    auto rc = load_config(c);
    const double m_c = m_c_flag >= 0 ? m_c_flag : rc.physics.magnitude_completeness;
    Manifest man{"fit-physics", &c, {input}, {}, now_seconds()};
    const fs::path dir = c.out.empty() ? fs::path(".") : fs::path(c.out);
    ensure_dir(dir);
    const auto cat = read_catalog(input, m_c);
    if (log_path.empty()) {
        const fs::path sib = fs::path(input).parent_path() / (fs::path(input).stem().string() + ".log.csv");
        if (fs::is_regular_file(sib)) log_path = sib.string();
    }

    std::vector<double> mags, upper;
    std::optional<synth::GenerationLog> lg;
    if (!log_path.empty()) {
        man.inputs.push_back(log_path);
        lg = synth::read_log(log_path);
        std::tie(mags, upper) = lg->truncated_magnitudes(m_c);
    } else {
        for (const auto& e : cat.events())
            if (e.magnitude >= m_c) mags.push_back(e.magnitude);
    }
    std::vector<double> delays;
    std::vector<std::pair<double, double>> pairs;
    std::string delay_source;
    const double horizon = rc.loss.omori_t_max;
    if (lg) {
        for (double d : lg->delays())
            if (d > 0 && d <= horizon) delays.push_back(d);
        pairs = lg->bath_pairs();
        delay_source = "generation log";
    } else {
        for (const auto& s : labeling::label_catalog(cat, rc.labels)) {
            delays.insert(delays.end(), s.aux.delays.begin(), s.aux.delays.end());
            if (s.aux.bath_pair) pairs.push_back(*s.aux.bath_pair);
        }
        delay_source = "trigger windows";
    }

    const auto out = dir / "physics.txt";
    std::ostringstream rep;
    rep << "[gutenberg_richter]\nmagnitude_completeness = " << fmt("%.4f", m_c) << '\n';
    train::PhysicsObservations obs;
    double gr_top = rc.loss.gr_top;
    if (lg) {
        // Aftershocks below each sequence's forced largest, truncated at that largest.
        const auto b = physics::mle_b_truncated(mags, upper, m_c);
        gr_top = std::min(gr_top, *std::min_element(upper.begin(), upper.end()));
        rep << "sample = aftershocks below each sequence maximum\nn = " << b.n << "\nb_mle = " << fmt("%.6f", b.b)
            << "\nb_std_error = " << fmt("%.6f", b.std_error) << "\n\n";
    } else {
        const auto b = physics::mle_b(mags, m_c);
        rep << "sample = catalog\nn = " << b.n << "\nb_mle = " << fmt("%.6f", b.b)
            << "\nb_std_error = " << fmt("%.6f", b.std_error) << "\n\n";
    }
    obs.gr = losses::gr_counts(mags, m_c, rc.loss.gr_bin_width, gr_top);

    rep << "[omori_utsu]\ndelay_source = " << delay_source << "\nn = " << delays.size() << '\n';
    if (delays.size() >= 50) {
        const auto f = physics::fit_omori(delays, horizon);
        rep << "p_mle = " << fmt("%.6f", f.p) << "\nc_mle = " << fmt("%.6f", f.c)
            << "\np_at_boundary = " << (f.p_at_boundary ? "true" : "false")
            << "\nc_at_boundary = " << (f.c_at_boundary ? "true" : "false") << "\n\n";
        const auto bins = losses::OmoriBins::log_spaced(rc.loss.omori_bins, rc.loss.omori_t_min, rc.loss.omori_t_max);
        obs.omori = losses::omori_histogram(delays, bins);
    } else {
        rep << "status = too few delays for a fit\n\n";
    }

    rep << "[bath]\nn = " << pairs.size() << '\n';
    if (!pairs.empty()) {
        double s = 0;
        for (const auto& [m0, m1] : pairs) s += m0 - m1;
        rep << "mean_gap = " << fmt("%.6f", s / static_cast<double>(pairs.size())) << "\n\n";
        obs.bath = pairs;
    } else {
        rep << "\n";
    }

    train::PhysicsTrainConfig pc;
    pc.steps = rc.physics.steps;
    pc.lr = rc.physics.lr;
    pc.bins = losses::OmoriBins::log_spaced(rc.loss.omori_bins, rc.loss.omori_t_min, rc.loss.omori_t_max);
    pc.lambda_physics = rc.loss.lambda_physics_stage2;
    const auto learned = train::train_physics(obs, {}, pc, rc.train);
    rep << "[learned]\nb = " << fmt("%.6f", learned.derived.b) << "\np = " << fmt("%.6f", learned.derived.p)
        << "\nc = " << fmt("%.6f", learned.derived.c) << "\ndelta_m = " << fmt("%.6f", learned.derived.delta_m)
        << "\nfinal_loss = " << fmt("%.8g", learned.final_loss) << '\n';
    atomic_write(out, [&](std::ostream& o) { o << rep.str(); });
    man.outputs = {out.string()};
    man.write(dir / "manifest.json");
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"poseidon: physics-informed energy-based earthquake pipeline"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "run configuration file");
        sub->add_option("--seed", common.seed, "seed for every random stream");
        sub->add_option("--out", common.out, "output location");
        sub->add_flag("--verbose", g_verbose, "progress on stderr");
    };

    std::string input, log_path, ckpt, data_path, split = "all", anomaly = "tsunami";
    double m_c = -1.0;
    bool best_threshold = false;
    long mainshocks = -1;
    double b = NAN, p = NAN, cc = NAN, dm = NAN, prod = NAN;
    catalog::QualityCriteria q;
    double q_min_st = NAN, q_dist = NAN, q_rms = NAN, q_gap = NAN, q_eh = NAN, q_ed = NAN, q_em = NAN;

    auto* ingest = app.add_subcommand("ingest", "parse, validate and quality-filter a catalog");
    ingest->add_option("catalog", input, "input catalog")->required();
    ingest->add_option("--mc", m_c, "magnitude of completeness");
    ingest->add_option("--min-stations", q_min_st);
    ingest->add_option("--max-station-distance", q_dist);
    ingest->add_option("--max-rms", q_rms);
    ingest->add_option("--max-gap", q_gap);
    ingest->add_option("--max-horizontal-error", q_eh);
    ingest->add_option("--max-depth-error", q_ed);
    ingest->add_option("--max-magnitude-error", q_em);
    add_common(ingest);

    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic catalog and its generation log");
    synth_cmd->add_option("--b", b, "Gutenberg-Richter b");
    synth_cmd->add_option("--p", p, "Omori-Utsu p");
    synth_cmd->add_option("--c", cc, "Omori-Utsu c (days)");
    synth_cmd->add_option("--bath-dm", dm, "mainshock minus largest aftershock magnitude");
    synth_cmd->add_option("--mainshocks", mainshocks, "number of mainshocks")->check(CLI::NonNegativeNumber);
    synth_cmd->add_option("--productivity", prod, "expected aftershocks at the minimum mainshock magnitude");
    add_common(synth_cmd);

    auto* label = app.add_subcommand("label", "label triggers and write features");
    label->add_option("catalog", input)->required();
    add_common(label);

    auto* train_cmd = app.add_subcommand("train", "two-stage training");
    train_cmd->add_option("--data", data_path, "catalog (default: synthetic catalog from the config)");
    add_common(train_cmd);

    auto* eval_cmd = app.add_subcommand("eval", "metrics report for a checkpoint");
    eval_cmd->add_option("--checkpoint", ckpt)->required();
    eval_cmd->add_option("--data", data_path)->required();
    eval_cmd->add_option("--split", split)->check(CLI::IsMember({"all", "val"}));
    eval_cmd->add_flag("--best-threshold", best_threshold, "report F1 at the F1-maximizing threshold");
    eval_cmd->add_option("--anomaly", anomaly, "label treated as anomalous in the energy report")
        ->check(CLI::IsMember({"tsunami", "foreshock", "aftershock"}));
    add_common(eval_cmd);

    auto* fit = app.add_subcommand("fit-physics", "estimate b, p, c and the Bath gap; fit the learnable scalars");
    fit->add_option("catalog", input)->required();
    fit->add_option("--log", log_path, "generation log (default: <catalog stem>.log.csv when present)");
    fit->add_option("--mc", m_c, "magnitude of completeness");
    add_common(fit);

    auto* roc = app.add_subcommand("export-roc", "ROC points per task");
    roc->add_option("--checkpoint", ckpt)->required();
    roc->add_option("--data", data_path)->required();
    roc->add_option("--split", split)->check(CLI::IsMember({"all", "val"}));
    add_common(roc);

    auto* hist = app.add_subcommand("export-history", "loss, validation and physics trajectories");
    hist->add_option("history", input, "history.csv from train")->required();
    add_common(hist);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*ingest) {
            auto set = [](std::optional<double>& o, double v) {
                if (!std::isnan(v)) o = v;
            };
            set(q.min_stations, q_min_st);
            set(q.max_min_station_dist, q_dist);
            set(q.max_rms, q_rms);
            set(q.max_azimuthal_gap, q_gap);
            set(q.max_err_horizontal, q_eh);
            set(q.max_err_depth, q_ed);
            set(q.max_err_magnitude, q_em);
            return cmd_ingest(common, input, q, m_c >= 0 ? m_c : 0.0);
        }
        if (*synth_cmd) {
            std::vector<std::pair<const char*, double>> ov;
            for (auto [k, v] : {std::pair<const char*, double>{"b", b}, {"p", p}, {"c", cc}, {"bath-dm", dm},
                                {"productivity", prod}})
                if (!std::isnan(v)) ov.emplace_back(k, v);
            return cmd_synth(common, ov, mainshocks);
        }
        if (*label) return cmd_label(common, input);
        if (*train_cmd) return cmd_train(common, data_path);
        if (*eval_cmd) return cmd_eval(common, ckpt, data_path, split, best_threshold, anomaly);
        if (*fit) return cmd_fit_physics(common, input, log_path, m_c);
        if (*roc) return cmd_export_roc(common, ckpt, data_path, split);
        if (*hist) return cmd_export_history(common, input);
    } catch (const Error& e) {
        std::cerr << "poseidon: " << e.what() << '\n';
        switch (e.kind()) {
            case ErrorKind::Io:
            case ErrorKind::Schema: return kIo;
            case ErrorKind::Config: return kConfig;
            case ErrorKind::Numerical:
            case ErrorKind::Estimation: return kNumerical;
            case ErrorKind::InvalidInput: return kUsage;
        }
    } catch (const std::exception& e) {
        std::cerr << "poseidon: " << e.what() << '\n';
        return kIo;
    }
    return kUsage;
}
