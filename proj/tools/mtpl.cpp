/*
 * Copyright 2026 The mtpl Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// mtpl command-line tool.
//
//   mtpl ingest   --corpus c.jsonl
//   mtpl attack   --corpus c.jsonl --kind dci-fixed --target file --rate 0.1 --seed 7
//   mtpl detect   --corpus c.jsonl --synonyms s.json [--ledger ledger.json] [--method semr|ac|ss|onion]
//   mtpl baseline --corpus c.jsonl --synonyms s.json --ledger ledger.json --method ac
//   mtpl analyze  --corpus c.jsonl --synonyms s.json [--ledger ledger.json]
//   mtpl eval     --corpus c.jsonl --synonyms s.json --ledger a.json [--ledger b.json] --methods semr,ac,ss,onion
//
// Exit codes: 0 ok, 2 usage or missing input, 3 data error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <mtpl/mtpl.hpp>

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;

class UsageError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        const auto e = item.find_last_not_of(" \t");
        out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> out;
    for (const auto& item : split_list(text)) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) throw UsageError("--w1: '" + item + "' is not a number");
        out.push_back(v);
    }
    if (out.empty()) throw UsageError("--w1 needs at least one value");
    return out;
}

std::string resolve(const std::string& path) {
    if (path.empty()) return path;
    return fs::weakly_canonical(fs::absolute(path)).string();
}

void require_file(const std::string& flag, const std::string& path) {
    if (path.empty()) throw UsageError("--" + flag + " is required");
    if (!fs::is_regular_file(path)) throw UsageError(flag + " file not found: " + path);
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw mtpl::DataError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw mtpl::DataError("write failed for '" + path.string() + "'");
}

std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

mtpl::PoisonLedger read_ledger(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw mtpl::DataError("cannot open ledger file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw mtpl::ParseError(1, "ledger '" + path + "' is not valid JSON: " + e.what());
    }
    return mtpl::ledger_from_json(j);
}

// raw option values that need checking before they become a RunConfig
struct Raw {
    std::string threshold_mode = "mean";
    std::optional<double> threshold;
    std::string normalize_scope = "run";
    std::string method = std::string(mtpl::kSemrMethod);
    std::string methods;
    std::string w1_grid;
};

struct Inputs {
    mtpl::Corpus corpus;
    std::optional<mtpl::PoisonLedger> ledger;
    mtpl::SynonymTable synonyms;
};

Inputs load_inputs(mtpl::RunConfig& cfg) {
    Inputs in;
    in.corpus = mtpl::load_corpus(cfg.corpus);
    in.synonyms = mtpl::load_synonyms(cfg.synonyms);
    if (cfg.ledgers.size() > 1) throw UsageError(cfg.subcommand + " takes at most one --ledger");
    if (!cfg.ledgers.empty()) {
        in.ledger = read_ledger(cfg.ledgers.front());
        in.corpus = mtpl::apply_ledger(in.corpus, *in.ledger);
        cfg.kind = std::string(mtpl::to_string(in.ledger->spec.kind));
        cfg.target = in.ledger->spec.target;
        cfg.payload = in.ledger->spec.payload;
        cfg.rate = in.ledger->rate;
    }
    return in;
}

struct Prepared {
    mtpl::Backends backends;
    mtpl::DetectionDataset dataset;
    mtpl::FollowUpLists lists;
};

Prepared prepare(const mtpl::RunConfig& cfg, const Inputs& in, std::uint64_t run_seed) {
    Prepared p;
    const mtpl::TriggerSpec* spec = in.ledger ? &in.ledger->spec : nullptr;
    const mtpl::PoisonLedger* ledger = in.ledger ? &*in.ledger : nullptr;
    p.backends = mtpl::make_backends(in.corpus, spec, cfg.beta);
    p.dataset = mtpl::build_detection_dataset(in.corpus, *p.backends.model, ledger, spec, in.synonyms, cfg.dataset_params(run_seed));
    p.lists = mtpl::followup_lists(p.dataset, *p.backends.model, cfg.jobs);
    return p;
}

ordered_json dataset_json(const mtpl::DetectionDataset& ds) {
    ordered_json j;
    j["queries"] = ds.samples.size();
    j["poisoned_queries"] = ds.poisoned_queries();
    j["snippets"] = ds.snippet_ids.size();
    j["poisoned_snippets"] = ds.poisoned_snippets.size();
    j["query_poison_rate"] = ds.query_poison_rate();
    j["snippet_poison_rate"] = ds.snippet_poison_rate();
    j["targets"] = ds.targets;
    j["notes"] = ds.notes;
    return j;
}

// Report body shared by detect and baseline: counts only with a ledger.
ordered_json report_json(const mtpl::RunConfig& cfg, const std::string& method, const Inputs& in, const mtpl::DetectionDataset& ds,
                         const mtpl::ConfusionCounts& counts, std::optional<double> anr, ordered_json extra) {
    ordered_json j;
    if (in.ledger) {
        j = mtpl::to_json(mtpl::make_report(method, in.ledger->spec, counts, anr, cfg.seed, {}));
        j.erase("config");
    } else {
        j["method"] = method;
        j["seed"] = cfg.seed;
    }
    j["dataset"] = dataset_json(ds);
    for (auto& [k, v] : extra.items()) j[k] = v;
    j["config"] = cfg.to_json();
    return j;
}

mtpl::BaselineSettings baseline_settings(const mtpl::RunConfig& cfg, const mtpl::SnippetDataset& data) {
    mtpl::BaselineSettings s;
    s.ac_threshold = cfg.ac_threshold;
    s.ss_fraction = cfg.ss_fraction;
    s.onion_threshold = cfg.onion_threshold;
    std::size_t positives = 0;
    for (const auto& [_, p] : data.ground_truth) positives += p ? 1 : 0;
    if (positives > 0) s.known_rate = static_cast<double>(positives) / static_cast<double>(data.ground_truth.size());
    return s;
}

mtpl::SnippetDataset snippets_for(const mtpl::RunConfig& cfg, const Inputs& in, const mtpl::DetectionDataset& ds,
                                  std::uint64_t run_seed) {
    static const mtpl::TriggerSpec none{};
    const bool equalize = cfg.equalize && in.ledger;
    return mtpl::snippet_dataset(ds, in.ledger ? in.ledger->spec : none, equalize, mtpl::derive_seed(run_seed, "equalize"));
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_ingest(const mtpl::RunConfig& cfg) {
    const auto corpus = mtpl::load_corpus(cfg.corpus);
    if (corpus.queries().empty()) throw mtpl::DataError("corpus '" + cfg.corpus + "' holds no records");
    const auto freq = mtpl::word_frequencies(corpus);
    ordered_json j;
    j["queries"] = corpus.queries().size();
    j["snippets"] = corpus.codebase().size();
    j["vocabulary"] = freq.counts.size();
    j["tokens"] = freq.total;
    j["median_count"] = freq.median_count();
    j["targets"] = ordered_json::array();
    for (const auto& w : mtpl::select_suspicious_targets(freq)) j["targets"].push_back({{"word", w}, {"count", freq.count(w)}});
    j["seed"] = cfg.seed;
    j["config"] = cfg.to_json();
    write_file(fs::path(cfg.out_dir) / "ingest.json", dump(j));
    std::cout << "ingested " << corpus.queries().size() << " records\n";
    return kExitOk;
}

int cmd_attack(const mtpl::RunConfig& cfg) {
    const auto corpus = mtpl::load_corpus(cfg.corpus);
    mtpl::TriggerSpec spec;
    spec.kind = *mtpl::parse_attack_kind(cfg.kind);
    spec.target = cfg.target;
    spec.payload = cfg.payload.empty() ? mtpl::default_payload(spec.kind) : cfg.payload;
    spec.seed = cfg.seed;
    const auto result = mtpl::poison_corpus(corpus, spec, cfg.rate, mtpl::derive_seed(cfg.seed, "poison"));
    std::ostringstream lines;
    mtpl::write_corpus(lines, result.corpus);
    write_file(fs::path(cfg.out_dir) / "poisoned.jsonl", lines.str());
    auto j = mtpl::to_json(result.ledger);
    j["config"] = cfg.to_json();
    write_file(fs::path(cfg.out_dir) / "ledger.json", dump(j));
    std::cout << "poisoned " << result.ledger.entries.size() << " snippets\n";
    return kExitOk;
}

int run_semr(mtpl::RunConfig& cfg, bool write_verdicts, bool write_report) {
    const auto in = load_inputs(cfg);
    const auto p = prepare(cfg, in, cfg.seed);
    const auto result = mtpl::detect_dataset(p.dataset, p.lists, cfg.hsv);
    const auto analysis = mtpl::analyze_run(p.dataset, result, *p.backends.model, cfg.hsv);

    std::size_t flagged = 0;
    std::string verdicts;
    for (const auto& v : result.verdicts) {
        flagged += v.poisoned ? 1 : 0;
        verdicts += mtpl::to_json(v).dump() + "\n";
    }
    if (write_verdicts) write_file(fs::path(cfg.out_dir) / "verdicts.jsonl", verdicts);

    auto aj = mtpl::to_json(analysis);
    aj["seed"] = cfg.seed;
    aj["config"] = cfg.to_json();
    write_file(fs::path(cfg.out_dir) / "analysis.json", dump(aj));

    if (write_report) {
        std::optional<double> anr;
        if (in.ledger) anr = mtpl::attack_anr(in.corpus, *p.backends.model, *in.ledger, cfg.jobs);
        const auto counts = mtpl::confusion(result.verdicts, p.dataset.ground_truth);
        ordered_json extra;
        extra["threshold"] = result.threshold;
        extra["flagged"] = flagged;
        extra["inferred_target"] = analysis.inferred_target ? ordered_json(*analysis.inferred_target) : ordered_json();
        write_file(fs::path(cfg.out_dir) / "report.json",
                   dump(report_json(cfg, std::string(mtpl::kSemrMethod), in, p.dataset, counts, anr, extra)));
    }
    std::cout << flagged << " of " << result.verdicts.size() << " queries flagged, threshold " << result.threshold << "\n";
    if (analysis.inferred_target) std::cout << "inferred target: " << *analysis.inferred_target << "\n";
    return kExitOk;
}

int run_baseline(mtpl::RunConfig& cfg, mtpl::BaselineMethod method) {
    const auto in = load_inputs(cfg);
    const auto p = prepare(cfg, in, cfg.seed);
    const auto data = snippets_for(cfg, in, p.dataset, cfg.seed);
    const auto training = mtpl::heldout_snippets(in.corpus, p.dataset, in.ledger ? &*in.ledger : nullptr);
    const auto run = mtpl::run_baseline(method, data, training, baseline_settings(cfg, data), cfg.seed, cfg.jobs);

    std::size_t flagged = 0;
    std::string verdicts;
    for (const auto& v : run.verdicts) {
        flagged += v.poisoned ? 1 : 0;
        verdicts += mtpl::to_json(v).dump() + "\n";
    }
    write_file(fs::path(cfg.out_dir) / "verdicts.jsonl", verdicts);

    std::optional<double> anr;
    if (in.ledger) anr = mtpl::attack_anr(in.corpus, *p.backends.model, *in.ledger, cfg.jobs);
    ordered_json extra;
    extra["parameter"] = run.parameter;
    extra["flagged"] = flagged;
    extra["equalized_snippets"] = data.equalized;
    write_file(fs::path(cfg.out_dir) / "report.json",
               dump(report_json(cfg, std::string(mtpl::to_string(method)), in, p.dataset, run.counts, anr, extra)));
    std::cout << flagged << " of " << run.verdicts.size() << " snippets flagged by " << mtpl::to_string(method) << "\n";
    return kExitOk;
}

int cmd_detect(mtpl::RunConfig& cfg, const std::string& method) {
    if (method == mtpl::kSemrMethod) return run_semr(cfg, true, true);
    return run_baseline(cfg, *mtpl::parse_baseline_method(method));
}

std::string semr_label(double w1, bool sweep) {
    if (!sweep) return std::string(mtpl::kSemrMethod);
    std::ostringstream out;
    out << mtpl::kSemrMethod << "[w1=" << std::fixed << std::setprecision(2) << w1 << "]";
    return out.str();
}

mtpl::Metrics average(const std::vector<mtpl::Metrics>& runs) {
    mtpl::Metrics m;
    std::vector<double> acc, prec, rec, f1;
    for (const auto& r : runs) {
        acc.push_back(r.accuracy);
        prec.push_back(r.precision);
        rec.push_back(r.recall);
        f1.push_back(r.f1);
        m.zero_denominator |= r.zero_denominator;
    }
    m.accuracy = mtpl::stable_mean(acc);
    m.precision = mtpl::stable_mean(prec);
    m.recall = mtpl::stable_mean(rec);
    m.f1 = mtpl::stable_mean(f1);
    return m;
}

int cmd_eval(mtpl::RunConfig& cfg) {
    if (cfg.ledgers.empty()) throw UsageError("eval requires at least one --ledger");
    if (cfg.methods.empty()) throw UsageError("eval needs a non-empty --methods list");
    if (cfg.repeats < 1) throw UsageError("--repeats must be at least 1");
    const auto clean = mtpl::load_corpus(cfg.corpus);
    const auto synonyms = mtpl::load_synonyms(cfg.synonyms);
    const bool sweep = !cfg.w1_grid.empty();
    const std::vector<double> grid = sweep ? cfg.w1_grid : std::vector<double>{cfg.hsv.w1};

    std::string csv = std::string(mtpl::kCsvHeader) + "\n";
    ordered_json rows = ordered_json::array();
    for (const auto& path : cfg.ledgers) {
        Inputs in;
        in.ledger = read_ledger(path);
        in.corpus = mtpl::apply_ledger(clean, *in.ledger);
        in.synonyms = synonyms;
        const auto& spec = in.ledger->spec;

        // per method label, in output order: summed counts and per-repeat metrics
        std::vector<std::string> labels;
        std::map<std::string, mtpl::ConfusionCounts> pooled;
        std::map<std::string, std::vector<mtpl::Metrics>> per_repeat;
        auto add = [&](const std::string& label, const mtpl::ConfusionCounts& c) {
            if (!pooled.contains(label)) labels.push_back(label);
            auto& t = pooled[label];
            t.tp += c.tp;
            t.tn += c.tn;
            t.fp += c.fp;
            t.fn += c.fn;
            per_repeat[label].push_back(mtpl::metrics(c));
        };

        std::optional<double> anr;
        for (std::size_t r = 0; r < cfg.repeats; ++r) {
            const auto run_seed = cfg.repeats == 1 ? cfg.seed : mtpl::derive_seed(cfg.seed, "repeat:" + std::to_string(r));
            const auto p = prepare(cfg, in, run_seed);
            if (!anr) anr = mtpl::attack_anr(in.corpus, *p.backends.model, *in.ledger, cfg.jobs);
            for (const auto& m : cfg.methods) {
                if (m == mtpl::kSemrMethod) {
                    for (double w1 : grid) {
                        auto hsv = cfg.hsv;
                        hsv.w1 = w1;
                        hsv.validate();
                        const auto result = mtpl::detect_dataset(p.dataset, p.lists, hsv);
                        add(semr_label(w1, sweep), mtpl::confusion(result.verdicts, p.dataset.ground_truth));
                    }
                    continue;
                }
                const auto method = *mtpl::parse_baseline_method(m);
                const auto data = snippets_for(cfg, in, p.dataset, run_seed);
                const auto training = mtpl::heldout_snippets(in.corpus, p.dataset, &*in.ledger);
                add(m, mtpl::run_baseline(method, data, training, baseline_settings(cfg, data), run_seed, cfg.jobs).counts);
            }
        }
        for (const auto& label : labels) {
            auto report = mtpl::make_report(label, spec, pooled[label], anr, cfg.seed, {});
            report.metrics = average(per_repeat[label]);
            csv += mtpl::csv_row(report) + "\n";
            auto j = mtpl::to_json(report);
            j.erase("config");
            j["ledger"] = path;
            rows.push_back(std::move(j));
        }
    }
    write_file(fs::path(cfg.out_dir) / "eval.csv", csv);
    ordered_json j;
    j["rows"] = std::move(rows);
    j["seed"] = cfg.seed;
    j["config"] = cfg.to_json();
    write_file(fs::path(cfg.out_dir) / "eval.json", dump(j));
    std::cout << csv;
    return kExitOk;
}

// ---------------------------------------------------------------------------
// Option wiring
// ---------------------------------------------------------------------------

void add_io(CLI::App* sub, mtpl::RunConfig& cfg) {
    sub->add_option("--corpus", cfg.corpus, "JSONL corpus: one {id, query, code} object per line")->required();
    sub->add_option("--out-dir", cfg.out_dir, "Directory for output files")->capture_default_str();
    sub->add_option("--seed", cfg.seed, "Master seed (falls back to $MTPL_SEED)")->envname("MTPL_SEED")->capture_default_str();
    sub->add_option("--jobs", cfg.jobs, "Worker threads for parallel stages")->check(CLI::Range(1u, 256u))->capture_default_str();
}

void add_detection(CLI::App* sub, mtpl::RunConfig& cfg, Raw& raw) {
    sub->add_option("--synonyms", cfg.synonyms, "JSON synonym lexicon")->required();
    sub->add_option("--ledger", cfg.ledgers, "Poison ledger written by `mtpl attack`");
    sub->add_option("--beta", cfg.beta, "Backdoor boost of the simulated poisoned model")->capture_default_str();
    sub->add_option("--w1", raw.w1_grid, "Weight of the rank variation (eval: comma-separated grid)");
    sub->add_option("--k", cfg.hsv.k, "Rank-list length")->capture_default_str();
    sub->add_option("--epsilon", cfg.hsv.epsilon, "Smoothing constant")->capture_default_str();
    sub->add_option("--threshold-mode", raw.threshold_mode, "mean or fixed")
        ->check(CLI::IsMember({"mean", "fixed"}))
        ->capture_default_str();
    sub->add_option("--threshold", raw.threshold, "Fixed threshold (implies --threshold-mode fixed)");
    sub->add_option("--normalize-scope", raw.normalize_scope, "run or group")
        ->check(CLI::IsMember({"run", "group"}))
        ->capture_default_str();
    sub->add_option("--queries-per-target", cfg.queries_per_target, "Sampled queries per suspicious word")->capture_default_str();
    sub->add_option("--insert-rank", cfg.insert_rank, "Rank of the snippet that receives the trigger")->capture_default_str();
    sub->add_flag("--equalize-poison-rate", cfg.equalize, "Poison extra snippets so baselines see the query-level rate");
    sub->add_option("--ac-threshold", cfg.ac_threshold, "AC minority-cluster share below which it is flagged")->capture_default_str();
    sub->add_option("--ss-fraction", cfg.ss_fraction, "SS removal fraction (default 1.5x the known poison rate)");
    sub->add_option("--onion-threshold", cfg.onion_threshold, "ONION perplexity-drop threshold (default calibrated)");
}

void finish_detection(mtpl::RunConfig& cfg, const Raw& raw, bool grid_allowed) {
    if (!raw.w1_grid.empty()) {
        auto grid = parse_grid(raw.w1_grid);
        if (grid_allowed && raw.w1_grid.find(',') != std::string::npos) cfg.w1_grid = grid;
        else if (grid.size() == 1) cfg.hsv.w1 = grid.front();
        else throw UsageError("--w1 takes a single value here");
    }
    cfg.hsv.threshold_mode = raw.threshold_mode == "fixed" || raw.threshold ? mtpl::ThresholdMode::fixed : mtpl::ThresholdMode::mean;
    if (cfg.hsv.threshold_mode == mtpl::ThresholdMode::fixed) {
        if (!raw.threshold) throw UsageError("--threshold-mode fixed needs --threshold");
        cfg.hsv.fixed_threshold = *raw.threshold;
    }
    cfg.hsv.normalize_scope = raw.normalize_scope == "group" ? mtpl::NormalizeScope::group : mtpl::NormalizeScope::run;
    try {
        cfg.hsv.validate();
        for (double w : cfg.w1_grid) {
            auto h = cfg.hsv;
            h.w1 = w;
            h.validate();
        }
        cfg.dataset_params(cfg.seed).validate();
    } catch (const mtpl::PreconditionError& e) {
        throw UsageError(e.what());
    }
    require_file("synonyms", cfg.synonyms);
    for (const auto& l : cfg.ledgers) require_file("ledger", l);
    cfg.synonyms = resolve(cfg.synonyms);
    for (auto& l : cfg.ledgers) l = resolve(l);
}

std::string valid_methods() {
    return std::string(mtpl::kSemrMethod) + ", ac, ss, onion";
}

void check_method(const std::string& m, bool semr_ok) {
    if (m == mtpl::kSemrMethod && semr_ok) return;
    if (mtpl::parse_baseline_method(m)) return;
    throw UsageError("invalid method '" + m + "'; valid methods: " + (semr_ok ? valid_methods() : std::string("ac, ss, onion")));
}

int run(int argc, char** argv) {
    CLI::App app{"mtpl: poisoning detection for code search"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "mtpl 0.1.0");

    mtpl::RunConfig cfg;
    Raw raw;

    auto* ingest = app.add_subcommand("ingest", "Validate a corpus and report target-word statistics");
    add_io(ingest, cfg);

    auto* attack = app.add_subcommand("attack", "Poison a corpus and write the ledger");
    add_io(attack, cfg);
    attack->add_option("--kind", cfg.kind, "dci-fixed, dci-pcfg, ir, or cu")->capture_default_str();
    attack->add_option("--target", cfg.target, "Target query word")->capture_default_str();
    attack->add_option("--rate", cfg.rate, "Fraction of target-bearing snippets to poison")->capture_default_str();
    attack->add_option("--payload", cfg.payload, "Trigger payload (default depends on the kind)");

    auto* detect = app.add_subcommand("detect", "Run semr or a baseline over a detection dataset");
    add_io(detect, cfg);
    add_detection(detect, cfg, raw);
    detect->add_option("--method", raw.method, "semr, ac, ss, or onion")->capture_default_str();

    auto* baseline = app.add_subcommand("baseline", "Run one baseline detector");
    add_io(baseline, cfg);
    add_detection(baseline, cfg, raw);
    baseline->add_option("--method", raw.method, "ac, ss, or onion")->required();

    auto* analyze = app.add_subcommand("analyze", "Infer the target word and trigger candidates");
    add_io(analyze, cfg);
    add_detection(analyze, cfg, raw);

    auto* eval = app.add_subcommand("eval", "Compare methods across ledgers and write CSV");
    add_io(eval, cfg);
    add_detection(eval, cfg, raw);
    eval->add_option("--methods", raw.methods, "Comma-separated methods")->default_str(valid_methods());
    eval->add_option("--repeats", cfg.repeats, "Seeded repetitions; metrics are averaged, counts summed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    auto* sub = app.get_subcommands().front();
    cfg.subcommand = sub->get_name();
    require_file("corpus", cfg.corpus);
    cfg.corpus = resolve(cfg.corpus);
    cfg.out_dir = resolve(cfg.out_dir);
    fs::create_directories(cfg.out_dir);

    if (sub == ingest) return cmd_ingest(cfg);
    if (sub == attack) {
        if (!mtpl::parse_attack_kind(cfg.kind))
            throw UsageError("invalid kind '" + cfg.kind + "'; valid kinds: " + std::string(mtpl::kValidAttackKinds));
        if (!(cfg.rate > 0.0 && cfg.rate <= 1.0)) throw UsageError("--rate must lie in (0, 1]");
        if (cfg.payload.empty()) cfg.payload = mtpl::default_payload(*mtpl::parse_attack_kind(cfg.kind));
        return cmd_attack(cfg);
    }

    finish_detection(cfg, raw, sub == eval);
    if (sub == eval) {
        const auto methods = raw.methods.empty() && eval->count("--methods") == 0
                                 ? split_list(valid_methods())
                                 : split_list(raw.methods);
        for (const auto& m : methods) check_method(m, true);
        cfg.methods = methods;
        return cmd_eval(cfg);
    }
    if (sub == analyze) {
        cfg.methods = {std::string(mtpl::kSemrMethod)};
        return run_semr(cfg, false, false);
    }
    check_method(raw.method, sub == detect);
    cfg.methods = {raw.method};
    return cmd_detect(cfg, raw.method);
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::cerr << "mtpl: " << e.what() << "\n";
        return kExitUsage;
    } catch (const mtpl::PreconditionError& e) {
        std::cerr << "mtpl: " << e.what() << "\n";
        return kExitUsage;
    } catch (const mtpl::Error& e) {
        std::cerr << "mtpl: " << e.what() << "\n";
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "mtpl: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "mtpl: " << e.what() << "\n";
        return kExitData;
    }
}
