// seenet command-line tool: dataset building, synthetic generation, pretraining, training,
// evaluation and per-location ranking.
//
// Exit codes: 0 success, 1 bad input/config or numeric failure, 2 usage error, 3 internal error.
// Failures print one line to stderr: "error: <kind>: <message>".

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "seenet/seenet.hpp"

namespace fs = std::filesystem;
using namespace seenet;

namespace {

using Json = nlohmann::json;

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw InputError("cannot create directory '" + dir + "': " + ec.message());
}

void require_file(const std::string& path) {
    if (!fs::is_regular_file(path)) throw InputError("missing input file '" + path + "'");
}

void write_json(const std::string& path, const Json& j) {
    std::ofstream f(path);
    if (!f) throw InputError("cannot write '" + path + "'");
    f << j.dump(2) << '\n';
}

Json read_json(const std::string& path) {
    require_file(path);
    try {
        return Json::parse(file_bytes(path));
    } catch (const Json::exception& e) {
        throw InputError("'" + path + "': " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Training flags: a config file gives the base values, explicit flags override them.

class TrainFlags {
public:
    void attach(CLI::App* app) {
        app->add_option("--config", config_path_, "JSON config file (keys as in config.json); flags override it");
        add(app, "--lr", [](TrainConfig& c) -> double& { return c.adam.lr; }, "Adam learning rate");
        add(app, "--beta1", [](TrainConfig& c) -> double& { return c.adam.beta1; }, "Adam first-moment decay");
        add(app, "--beta2", [](TrainConfig& c) -> double& { return c.adam.beta2; }, "Adam second-moment decay");
        add(app, "--eps", [](TrainConfig& c) -> double& { return c.adam.eps; }, "Adam epsilon");
        add(app, "--dim", [](TrainConfig& c) -> std::size_t& { return c.model.dim; }, "embedding dimension");
        add(app, "--layers", [](TrainConfig& c) -> std::size_t& { return c.model.blocks; }, "number of SEConv blocks");
        add(app, "--k-neighbors", [](TrainConfig& c) -> std::size_t& { return c.model.neighbors_k; },
            "sampled cross-time neighbors per edge");
        add(app, "--rs-agg", [](TrainConfig& c) -> bool& { return c.model.use_rs_agg; }, "intra-time aggregation on/off");
        add(app, "--se-prop", [](TrainConfig& c) -> bool& { return c.model.use_se_prop; }, "inter-time propagation on/off");
        add(app, "--context", [](TrainConfig& c) -> bool& { return c.model.use_context; }, "sampled context on/off");
        add(app, "--plain-gcn", [](TrainConfig& c) -> bool& { return c.model.plain_gcn; }, "first-order aggregation only");
        add(app, "--input-scale", [](TrainConfig& c) -> double& { return c.model.input_scale; }, "input embedding std");
        add(app, "--weight-gain", [](TrainConfig& c) -> double& { return c.model.weight_gain; }, "propagation weight gain");
        add(app, "--calibrate-init", [](TrainConfig& c) -> bool& { return c.calibrate_init; },
            "rescale block weights at initialisation");
        add(app, "--lambda-global", [](TrainConfig& c) -> double& { return c.ssl.lambda_global; }, "global SSL weight");
        add(app, "--lambda-local", [](TrainConfig& c) -> double& { return c.ssl.lambda_local; }, "local SSL weight");
        add(app, "--d1", [](TrainConfig& c) -> auto& { return c.ssl.d1; }, "negative band inner radius (cells)");
        add(app, "--d2", [](TrainConfig& c) -> auto& { return c.ssl.d2; }, "negative band outer radius (cells)");
        add(app, "--cell-size", [](TrainConfig& c) -> double& { return c.ssl.cell_size_m; }, "grid cell size in metres");
        add(app, "--l2", [](TrainConfig& c) -> double& { return c.ssl.l2; }, "L2 weight during pretraining");
        add(app, "--ssl-negatives", [](TrainConfig& c) -> std::size_t& { return c.ssl.negatives; },
            "grid negatives per node");
        add(app, "--epochs", [](TrainConfig& c) -> std::size_t& { return c.epochs; }, "training epochs");
        add(app, "--pretrain-epochs", [](TrainConfig& c) -> std::size_t& { return c.pretrain_epochs; },
            "self-supervised epochs");
        add(app, "--negatives", [](TrainConfig& c) -> std::size_t& { return c.negatives; }, "corrupted tails per edge");
        add(app, "--bins", [](TrainConfig& c) -> std::size_t& { return c.bins; }, "distance bins");
        add(app, "--seed", [](TrainConfig& c) -> std::uint64_t& { return c.seed; }, "master seed");
        add(app, "--symmetrize", [](TrainConfig& c) -> bool& { return c.symmetrize; }, "add reverse edges");
        add(app, "--second-order-filter", [](TrainConfig& c) -> bool& { return c.second_order_filter; },
            "keep only endpoints reached by two or more distinct 2-hop paths");
        add(app, "--bins-all-pairs", [](TrainConfig& c) -> bool& { return c.bins_all_pairs; },
            "fit bins on all node pairs");
        add(app, "--predictor-scale", [](TrainConfig& c) -> double& { return c.predictor_scale; },
            "relation weight init std");
        add(app, "--k", [](TrainConfig& c) -> std::size_t& { return c.eval.k; }, "cutoff of MRR@k / HR@k");
        add(app, "--filtered", [](TrainConfig& c) -> bool& { return c.eval.filtered; }, "filtered ranking");
        add(app, "--valid-every", [](TrainConfig& c) -> std::size_t& { return c.valid_every; }, "validation interval");
        add(app, "--batch-size", [](TrainConfig& c) -> std::size_t& { return c.batch_size; },
            "training edges per step (0: full batch)");
        enum_opt(app, "--gate-distance", {"two-hop", "first-hop"}, [](TrainConfig& c, const std::string& v) {
            c.model.gate_distance = v == "two-hop" ? GateDistance::TwoHop : GateDistance::FirstHop;
        });
        enum_opt(app, "--combine", {"all", "nonempty"}, [](TrainConfig& c, const std::string& v) {
            c.model.combine = v == "all" ? CombineDivisor::AllPatterns : CombineDivisor::NonEmptyPatterns;
        });
        enum_opt(app, "--fuse", {"included", "span"}, [](TrainConfig& c, const std::string& v) {
            c.model.fuse = v == "included" ? FuseDivisor::IncludedSegments : FuseDivisor::WindowSpan;
        });
        enum_opt(app, "--between-blocks", {"none", "relu", "tanh"}, [](TrainConfig& c, const std::string& v) {
            c.model.between_blocks = v == "none" ? Activation::None : (v == "relu" ? Activation::ReLU : Activation::Tanh);
        });
        enum_opt(app, "--local-stage", {"final", "intra"}, [](TrainConfig& c, const std::string& v) {
            c.ssl.local_stage = v == "final" ? LocalStage::Final : LocalStage::Intra;
        });
        std::vector<std::string> variants;
        for (const auto& [_, n] : variant_names()) variants.push_back(n);
        variant_opt_ = app->add_option("--variant", variant_, "ablation variant, applied after all other settings")
                           ->check(CLI::IsMember(variants));
        split_opt_ = app->add_option("--split", split_, "train/valid/test ratios")->expected(3);
    }

    TrainConfig resolve() const {
        TrainConfig c = config_path_.empty() ? TrainConfig{} : train_config_from_json(read_json(config_path_));
        for (const auto& f : apply_) f(c);
        if (split_opt_->count()) c.ratios = {split_[0], split_[1], split_[2]};
        if (variant_opt_->count()) apply_variant(c, parse_variant(variant_));
        c.validate();
        return c;
    }

private:
    template <class Get>
    void add(CLI::App* app, const std::string& name, Get get, const std::string& help) {
        using T = std::decay_t<decltype(get(std::declval<TrainConfig&>()))>;
        auto value = std::make_shared<T>(get(defaults_));
        CLI::Option* opt = app->add_option(name, *value, help)->default_str(to_text(*value));
        apply_.push_back([value, opt, get](TrainConfig& c) {
            if (opt->count()) get(c) = *value;
        });
    }

    template <class Set>
    void enum_opt(CLI::App* app, const std::string& name, std::vector<std::string> choices, Set set) {
        auto value = std::make_shared<std::string>();
        CLI::Option* opt = app->add_option(name, *value)->check(CLI::IsMember(choices));
        apply_.push_back([value, opt, set](TrainConfig& c) {
            if (opt->count()) set(c, *value);
        });
    }

    template <class T>
    static std::string to_text(const T& v) {
        if constexpr (std::is_same_v<T, bool>) return v ? "true" : "false";
        else return Json(v).dump();
    }

    TrainConfig defaults_;
    std::string config_path_;
    std::vector<std::function<void(TrainConfig&)>> apply_;
    std::string variant_;
    CLI::Option* variant_opt_ = nullptr;
    std::vector<double> split_;
    CLI::Option* split_opt_ = nullptr;
};

// ---------------------------------------------------------------------------
// Model directories

struct LoadedModel {
    ModelMeta meta;
    DatasetSplit split;
    ParamStore params;
    DistanceBinBoundaries bounds;
    std::string data_dir;
};

LoadedModel load_model(const std::string& dir, const std::string& data_override) {
    LoadedModel m;
    const Checkpoint ck = load_checkpoint(dir + "/checkpoint.bin");
    m.meta = read_model_meta(ck);
    m.bounds = read_boundaries(ck);
    m.params = params_from_checkpoint(ck);
    require_file(dir + "/split.csv");
    m.split = read_split_csv(dir + "/split.csv", m.meta.num_segments);
    m.data_dir = data_override;
    if (m.data_dir.empty()) {
        const Json run = read_json(dir + "/config.json");
        m.data_dir = run.value("data", std::string());
        if (m.data_dir.empty()) throw InputError("no --data given and '" + dir + "/config.json' names no dataset");
    }
    return m;
}

std::vector<Location> load_locations(const std::string& data_dir, std::size_t expected_nodes) {
    require_file(data_dir + "/nodes.csv");
    auto locs = read_nodes_csv(data_dir + "/nodes.csv");
    if (expected_nodes && locs.size() != expected_nodes)
        throw InputError("dataset '" + data_dir + "' has " + std::to_string(locs.size()) + " nodes, the model " +
                         std::to_string(expected_nodes));
    return locs;
}

void write_history(const std::string& path, const std::vector<EpochLog>& history) {
    std::ofstream f(path);
    if (!f) throw InputError("cannot write '" + path + "'");
    f << "stage,epoch,loss,valid_mrr\n";
    char buf[128];
    for (const EpochLog& e : history) {
        std::snprintf(buf, sizeof buf, "%s,%zu,%.17g,%.17g\n", e.stage.c_str(), e.epoch, e.loss, e.valid_mrr);
        f << buf;
    }
}

Json run_record(const std::string& command, const TrainConfig& cfg, const std::string& data) {
    Json j = to_json(cfg);
    j["command"] = command;
    j["data"] = fs::absolute(data).lexically_normal().string();
    return j;
}

Dataset load_data(const std::string& dir) {
    require_file(dir + "/nodes.csv");
    require_file(dir + "/edges.csv");
    Dataset d = load_dataset(dir);
    if (d.num_relations == 0) throw InputError("dataset '" + dir + "' has no edges");
    return d;
}

DatasetSplit make_split(const Dataset& d, const TrainConfig& cfg) {
    Rng rng = make_stream(cfg.seed, "split");
    return split_dataset(d.edges, d.num_segments, cfg.ratios, rng);
}

void progress(const EpochLog& e) {
    if (e.valid_mrr >= 0)
        log::info(e.stage + " epoch " + std::to_string(e.epoch) + " loss " + std::to_string(e.loss) + " valid MRR " +
                  std::to_string(e.valid_mrr));
    else
        log::debug(e.stage + " epoch " + std::to_string(e.epoch) + " loss " + std::to_string(e.loss));
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_synth(const SynthConfig& sc, const std::string& out) {
    const SynthDataset s = synth_generate(sc);
    ensure_dir(out);
    const DatasetManifest m = write_synth_dataset(out, s, sc);
    Json run = m.parameters;
    run["command"] = "synth";
    run["segments"] = sc.num_segments;
    run["relations"] = sc.num_relations;
    write_json(out + "/run.json", run);
    std::cout << "synth: " << s.locations.size() << " nodes, " << s.observed.size() << " observed, " << s.hidden.size()
              << " held-out edges, hash " << m.content_hash << '\n';
    return 0;
}

struct BuildArgs {
    std::string kind, log, nodes, mode = "session", out;
    bool nested_low_flow = false;
};

int cmd_build(const BuildArgs& a) {
    require_file(a.log);
    require_file(a.nodes);
    const auto locs = read_nodes_csv(a.nodes);
    BuildResult res;
    std::vector<std::string> labels;
    Json params{{"kind", a.kind}, {"log", fs::path(a.log).filename().string()}};
    if (a.kind == "business") {
        BusinessOptions opt;
        opt.mode = a.mode == "checkin" ? UnitMode::Checkin : UnitMode::Session;
        opt.num_nodes = locs.size();
        res = build_business_relations_csv(a.log, opt);
        labels = {"competitive", "complementary"};
        params["mode"] = a.mode;
    } else {
        MobilityOptions opt;
        opt.nested_low_flow = a.nested_low_flow;
        opt.num_nodes = locs.size();
        res = build_mobility_relations_csv(a.log, opt);
        labels = {"high-flow", "low-flow"};
        params["nested_low_flow"] = a.nested_low_flow;
    }
    params["records"] = res.records;
    params["skipped"] = res.skipped;
    ensure_dir(a.out);
    write_nodes_csv(a.out + "/nodes.csv", locs);
    write_edges_csv(a.out + "/edges.csv", res.edges);
    DatasetManifest m = make_manifest(locs.size(), 2, kDefaultSegments, res.edges);
    m.relation_labels = labels;
    m.parameters = params;
    m.content_hash = content_hash({a.out + "/nodes.csv", a.out + "/edges.csv"});
    write_manifest(a.out + "/manifest.json", m);
    std::cout << "build-dataset: " << res.edges.size() << " edges from " << res.records << " records (" << res.skipped
              << " skipped), hash " << m.content_hash << '\n';
    return 0;
}

/// Parameters for a new run, optionally starting from a pretrained model directory.
ParamStore starting_params(const SeenetContext& ctx, const std::optional<LoadedModel>& pre) {
    ParamStore fresh = ctx.init_params();
    if (!pre) return fresh;
    for (auto& [name, e] : fresh.entries()) {
        if (!pre->params.contains(name)) continue;
        const Tensor& v = pre->params.value(name);
        if (v.shape() != e.value.shape())
            throw ConfigError("pretrained parameter '" + name + "' has shape " + shape_str(v.shape()) + ", expected " +
                              shape_str(e.value.shape()));
        e.value = v;
    }
    return fresh;
}

int cmd_fit(const std::string& command, const TrainConfig& cfg, const std::string& data, const std::string& out,
            const std::string& pretrained) {
    const Dataset d = load_data(data);
    std::optional<LoadedModel> pre;
    DatasetSplit split;
    if (!pretrained.empty()) {
        pre = load_model(pretrained, data);
        if (pre->meta.num_nodes != d.locations.size())
            throw ConfigError("pretrained model and dataset disagree on the node count");
        split = pre->split;
    } else {
        split = make_split(d, cfg);
    }
    const SeenetContext ctx(cfg, d.locations, DatasetSplit::flatten(split.train), d.num_relations, d.num_segments,
                            pre ? std::optional(pre->bounds) : std::nullopt);
    ensure_dir(out);
    Json run = run_record(command, cfg, data);
    if (pre) run["pretrained"] = fs::absolute(pretrained).lexically_normal().string();
    write_json(out + "/config.json", run);
    write_split_csv(out + "/split.csv", split);

    ModelMeta meta{cfg, ctx.num_nodes(), ctx.num_relations(), ctx.num_segments(), 0, -1.0};
    if (command == "pretrain") {
        ParamStore store = starting_params(ctx, pre);
        const auto history = pretrain(ctx, store, progress);
        write_history(out + "/history.csv", history);
        save_checkpoint(out + "/checkpoint.bin", make_checkpoint(store, ctx.encoder(), meta));
        std::cout << "pretrain: " << history.size() << " epochs, final loss "
                  << (history.empty() ? 0.0 : history.back().loss) << '\n';
        return 0;
    }
    TrainResult res;
    if (pre) {
        res = train(ctx, split, starting_params(ctx, pre), progress);
    } else {
        res = pretrain_then_train(ctx, split, progress);
    }
    meta.best_epoch = res.best_epoch;
    meta.best_valid_mrr = res.best_valid_mrr;
    write_history(out + "/history.csv", res.history);
    if (res.best_valid_mrr >= 0) res.valid_report.write_csv(out + "/valid_report.csv");
    save_checkpoint(out + "/checkpoint.bin", make_checkpoint(res.params, ctx.encoder(), meta));
    std::cout << "train: best epoch " << res.best_epoch << ", valid MRR@" << cfg.eval.k << " " << res.best_valid_mrr
              << '\n';
    return 0;
}

struct EvalArgs {
    std::string model, data, out, which = "test";
    std::size_t k = 10;
    bool raw = false;
};

int cmd_eval(const EvalArgs& a) {
    LoadedModel m = load_model(a.model, a.data);
    const auto locs = load_locations(m.data_dir, m.meta.num_nodes);
    const SeenetContext ctx(m.meta.config, locs, DatasetSplit::flatten(m.split.train), m.meta.num_relations,
                            m.meta.num_segments, m.bounds);
    const auto queries = DatasetSplit::flatten(a.which == "valid" ? m.split.valid : m.split.test);
    const RankingReport rep = evaluate(ctx.scoring_state(m.params), queries, known_positives(m.split), EvalOptions{a.k, !a.raw, {}});
    const std::string out = a.out.empty() ? a.model : a.out;
    ensure_dir(out);
    rep.write_csv(out + "/report.csv");
    std::cout << rep.table();
    return 0;
}

struct RankArgs {
    std::string model, data, segment;
    std::size_t node = 0, relation = 0, top = 10;
};

int cmd_rank(const RankArgs& a) {
    LoadedModel m = load_model(a.model, a.data);
    const auto locs = load_locations(m.data_dir, m.meta.num_nodes);
    const SeenetContext ctx(m.meta.config, locs, DatasetSplit::flatten(m.split.train), m.meta.num_relations,
                            m.meta.num_segments, m.bounds);
    const auto top = rank_for_location(ctx.scoring_state(m.params), a.node, parse_segment(a.segment), a.relation, a.top);
    std::cout << "rank,node,score\n";
    char buf[96];
    for (std::size_t p = 0; p < top.size(); ++p) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g\n", p + 1, top[p].node, top[p].score);
        std::cout << buf;
    }
    return 0;
}

int fail(const char* kind, const std::string& msg, int code) {
    std::cerr << "error: " << kind << ": " << msg << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Time-specific location relationship prediction"};
    app.require_subcommand(1);

    SynthConfig sc;
    std::string synth_out;
    CLI::App* synth = app.add_subcommand("synth", "generate a planted-relationship dataset");
    synth->add_option("--nodes", sc.num_nodes, "number of locations")->capture_default_str();
    synth->add_option("--segments", sc.num_segments, "time segments per day")->capture_default_str();
    synth->add_option("--relations", sc.num_relations, "relation types")->capture_default_str();
    synth->add_option("--seed", sc.seed, "generator seed")->capture_default_str();
    synth->add_option("--sparsity", sc.sparsity, "observed fraction of true edges per segment")->capture_default_str();
    synth->add_option("--density", sc.density, "edge probability multiplier")->capture_default_str();
    synth->add_option("--categories", sc.categories, "location categories")->capture_default_str();
    synth->add_option("--clusters", sc.clusters, "spatial clusters (0: nodes / 25)")->capture_default_str();
    synth->add_option("--night-flip", sc.night_flip, "complementary links that turn competitive at night")
        ->capture_default_str();
    synth->add_option("--out", synth_out, "output directory")->required();

    BuildArgs build;
    CLI::App* bld = app.add_subcommand("build-dataset", "build relation edges from an event log");
    bld->add_option("--kind", build.kind, "business (sessions/check-ins) or mobility (trips)")
        ->required()
        ->check(CLI::IsMember({"business", "mobility"}));
    bld->add_option("--log", build.log, "event or trip CSV")->required();
    bld->add_option("--nodes", build.nodes, "node CSV (id,lon,lat)")->required();
    bld->add_option("--mode", build.mode, "business unit: session or checkin")
        ->check(CLI::IsMember({"session", "checkin"}))
        ->capture_default_str();
    bld->add_flag("--nested-low-flow", build.nested_low_flow, "low-flow as the whole top half");
    bld->add_option("--out", build.out, "output directory")->required();

    TrainFlags pre_flags, train_flags;
    std::string pre_data, pre_out, train_data, train_out, train_pre;
    CLI::App* pre = app.add_subcommand("pretrain", "self-supervised pretraining only");
    pre->add_option("--data", pre_data, "dataset directory")->required();
    pre->add_option("--out", pre_out, "output model directory")->required();
    pre_flags.attach(pre);
    CLI::App* trn = app.add_subcommand("train", "pretrain (unless --pretrained) and train");
    trn->add_option("--data", train_data, "dataset directory")->required();
    trn->add_option("--out", train_out, "output model directory")->required();
    trn->add_option("--pretrained", train_pre, "start from a pretrain output directory");
    train_flags.attach(trn);

    EvalArgs ev;
    CLI::App* evl = app.add_subcommand("eval", "rank held-out edges and write report.csv");
    evl->add_option("--model", ev.model, "model directory")->required();
    evl->add_option("--data", ev.data, "dataset directory (default: the one the model was trained on)");
    evl->add_option("--out", ev.out, "report directory (default: the model directory)");
    evl->add_option("--k", ev.k, "cutoff")->capture_default_str();
    evl->add_option("--set", ev.which, "test or valid")->check(CLI::IsMember({"test", "valid"}))->capture_default_str();
    evl->add_flag("--raw", ev.raw, "unfiltered ranking");

    RankArgs rk;
    CLI::App* rnk = app.add_subcommand("rank", "top locations for one node, segment and relation");
    rnk->add_option("--model", rk.model, "model directory")->required();
    rnk->add_option("--data", rk.data, "dataset directory (default: the one the model was trained on)");
    rnk->add_option("--node", rk.node, "query location id")->required();
    rnk->add_option("--segment", rk.segment, "segment name or index")->required();
    rnk->add_option("--relation", rk.relation, "relation id")->required();
    rnk->add_option("--top", rk.top, "rows to print")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        const auto active = app.get_subcommands();
        std::cerr << "error: usage: " << e.what() << '\n' << (active.empty() ? app.help() : active.front()->help());
        return 2;
    }

    try {
        if (*synth) return cmd_synth(sc, synth_out);
        if (*bld) return cmd_build(build);
        if (*pre) return cmd_fit("pretrain", pre_flags.resolve(), pre_data, pre_out, "");
        if (*trn) return cmd_fit("train", train_flags.resolve(), train_data, train_out, train_pre);
        if (*evl) return cmd_eval(ev);
        if (*rnk) return cmd_rank(rk);
    } catch (const InputError& e) {
        return fail("input", e.what(), 1);
    } catch (const ConfigError& e) {
        return fail("config", e.what(), 1);
    } catch (const NumericError& e) {
        return fail("numeric", e.what(), 1);
    } catch (const std::logic_error& e) {
        return fail("internal", e.what(), 3);
    } catch (const std::exception& e) {
        return fail("runtime", e.what(), 1);
    }
    return 2;
}
