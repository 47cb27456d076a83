// SPDX-License-Identifier: Apache-2.0
#include "hopscotch/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "hopscotch/analysis.hpp"
#include "hopscotch/data.hpp"
#include "hopscotch/errors.hpp"
#include "hopscotch/hopscotch.hpp"
#include "hopscotch/persist.hpp"
#include "hopscotch/svg.hpp"
#include "hopscotch/train.hpp"

namespace hopscotch {

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::uint64_t env_seed() {
    if (const char* s = std::getenv("HOPSCOTCH_SEED")) {
        char* end = nullptr;
        const auto v = std::strtoull(s, &end, 10);
        if (*s && end && *end == '\0') return v;
        throw UsageError("HOPSCOTCH_SEED must be an unsigned integer, got '" + std::string(s) + "'");
    }
    return 0;
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

struct TaskFlags {
    std::string kind = "arith";
    int min_chain = 1;
    int max_chain = 2;
    int operand_max = 9;
    int modulus = 10;
    int min_length = 3;
    int max_length = 6;

    void add(CLI::App* app) {
        app->add_option("--task", kind, "arith | copy | reverse | parity")->capture_default_str();
        app->add_option("--min-chain", min_chain, "fewest operators per arithmetic prompt")->capture_default_str();
        app->add_option("--max-chain", max_chain, "most operators per arithmetic prompt")->capture_default_str();
        app->add_option("--operand-max", operand_max, "operands drawn from [0, N]")->capture_default_str();
        app->add_option("--modulus", modulus, "arithmetic modulus")->capture_default_str();
        app->add_option("--min-length", min_length, "shortest string for copy/reverse/parity")->capture_default_str();
        app->add_option("--max-length", max_length, "longest string for copy/reverse/parity")->capture_default_str();
    }

    TaskSpec spec(std::uint64_t seed, Split split) const {
        TaskSpec t;
        t.kind = parse_task_kind(kind);
        t.min_chain = min_chain;
        t.max_chain = max_chain;
        t.operand_max = operand_max;
        t.modulus = modulus;
        t.min_length = min_length;
        t.max_length = max_length;
        t.seed = seed;
        t.split = split;
        t.validate();
        return t;
    }
};

std::string join_args(const std::vector<std::string>& args) {
    std::string out;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (i) out += ' ';
        out += args[i];
    }
    return out;
}

void require_file(const std::string& path, const char* flag) {
    if (path.empty()) throw UsageError(std::string(flag) + " is required");
    if (!std::filesystem::exists(path)) throw UsageError(std::string(flag) + ": no such file '" + path + "'");
}

/// Base weights with the variant's scales and mask reattached.
Weights full_weights(const Checkpoint& c) {
    for (const auto& l : c.weights.layers)
        if (!l.attention) throw UsageError("checkpoint has physically removed blocks; pass the base model instead");
    return c.weights;
}

void write_text(const std::string& path, const std::string& text) {
    write_file_atomic(path, text);
}

}  // namespace

std::vector<int> parse_layer_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string part;
    auto to_int = [&](const std::string& s) {
        std::size_t used = 0;
        int v = 0;
        try {
            v = std::stoi(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (s.empty() || used != s.size()) throw UsageError("bad layer list '" + text + "'");
        return v;
    };
    while (std::getline(ss, part, ',')) {
        const auto dots = part.find("..");
        if (dots == std::string::npos) {
            out.push_back(to_int(part));
        } else {
            const int lo = to_int(part.substr(0, dots));
            const int hi = to_int(part.substr(dots + 2));
            if (hi < lo) throw UsageError("bad layer range '" + part + "'");
            for (int l = lo; l <= hi; ++l) out.push_back(l);
        }
    }
    if (out.empty()) throw UsageError("empty layer list");
    return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Learned attention-block skipping and rescaling for small causal transformers", "hopscotch"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "expand help for every subcommand");
    std::uint64_t seed = 0;
    bool seed_given = false;
    auto add_seed = [&](CLI::App* sub) {
        sub->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& v) { seed = v; seed_given = true; },
                                               "random seed (falls back to HOPSCOTCH_SEED, then 0)");
    };

    // pretrain -------------------------------------------------------------
    auto* pre = app.add_subcommand("pretrain", "train a base model on a synthetic task");
    ModelConfig mc;
    PretrainOptions po;
    TaskFlags pre_task;
    std::string pre_out;
    pre->add_option("--layers", mc.n_layers, "transformer layers")->capture_default_str();
    pre->add_option("--dim", mc.d_model, "model width")->capture_default_str();
    pre->add_option("--heads", mc.n_heads, "attention heads")->capture_default_str();
    int ffn = 0;
    pre->add_option("--ffn", ffn, "MLP width (default 4 x dim)");
    pre->add_option("--max-seq-len", mc.max_seq_len, "longest sequence")->capture_default_str();
    pre->add_option("--steps", po.steps, "optimizer steps")->capture_default_str();
    pre->add_option("--lr", po.learning_rate, "learning rate")->capture_default_str();
    pre->add_option("--batch", po.batch_size, "batch size")->capture_default_str();
    pre->add_option("--eval-every", po.eval_every, "steps between accuracy checks (0: only at the end)")->capture_default_str();
    pre->add_option("--eval-n", po.eval_count, "eval prompts")->capture_default_str();
    pre->add_option("--target-acc", po.target_accuracy, "flexible accuracy that stops training")->capture_default_str();
    pre->add_option("--out", pre_out, "output checkpoint")->required();
    pre_task.add(pre);
    add_seed(pre);

    // teacher --------------------------------------------------------------
    auto* tea = app.add_subcommand("teacher", "write a training set from the base model's greedy answers");
    std::string tea_model, tea_out, tea_source = "model";
    std::size_t tea_n = 256;
    TaskFlags tea_task;
    tea->add_option("--model", tea_model, "base checkpoint")->required();
    tea->add_option("--n", tea_n, "prompts")->capture_default_str();
    tea->add_option("--out", tea_out, "output JSONL")->required();
    tea->add_option("--source", tea_source, "model (greedy generations) | data (generator labels)")
        ->check(CLI::IsMember({"model", "data"}))
        ->capture_default_str();
    tea_task.add(tea);
    add_seed(tea);

    // run ------------------------------------------------------------------
    auto* run = app.add_subcommand("run", "remove attention blocks and rescale");
    std::string run_model, run_data, run_out, run_trace, run_strategy = "iterative";
    std::optional<int> run_remove;
    std::optional<double> run_threshold;
    TrainConfig probe_cfg = TrainConfig::probe();
    TrainConfig rescale_cfg = TrainConfig::rescale();
    int probe_parallel = 1;
    bool no_rescale = false;
    std::size_t run_eval_n = 200;
    TaskFlags run_task;
    run->add_option("--model", run_model, "base checkpoint")->required();
    run->add_option("--data", run_data, "training JSONL")->required();
    auto* opt_remove = run->add_option("--remove", run_remove, "number of blocks to remove");
    auto* opt_thresh = run->add_option("--loss-threshold", run_threshold, "stop before the loss exceeds this");
    opt_remove->excludes(opt_thresh);
    run->add_option("--strategy", run_strategy, "iterative | full-greedy | random")
        ->check(CLI::IsMember({"iterative", "full-greedy", "random"}))
        ->capture_default_str();
    run->add_option("--probe-lr", probe_cfg.learning_rate, "probe learning rate")->capture_default_str();
    run->add_option("--rescale-lr", rescale_cfg.learning_rate, "rescale learning rate")->capture_default_str();
    std::size_t batch = 32;
    run->add_option("--batch", batch, "batch size")->capture_default_str();
    run->add_option("--epochs", rescale_cfg.epochs, "rescale epoch cap")->capture_default_str();
    run->add_option("--patience", rescale_cfg.patience, "epochs without improvement before stopping")->capture_default_str();
    run->add_option("--probe-parallel", probe_parallel, "concurrent candidate probes")->capture_default_str();
    run->add_flag("--no-rescale", no_rescale, "random strategy only: keep the remaining scales at 1");
    run->add_option("--eval-n", run_eval_n, "held-out prompts for per-stage accuracy (0 disables)")->capture_default_str();
    run->add_option("--out", run_out, "output checkpoint")->required();
    run->add_option("--trace", run_trace, "output trace JSON")->required();
    run_task.add(run);
    add_seed(run);

    // eval -----------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "accuracy of a checkpoint on held-out prompts");
    std::string ev_model, ev_metric = "both";
    std::size_t ev_n = 200;
    TaskFlags ev_task;
    ev->add_option("--model", ev_model, "checkpoint")->required();
    ev->add_option("--metric", ev_metric, "strict | flexible | both")
        ->check(CLI::IsMember({"strict", "flexible", "both"}))
        ->capture_default_str();
    ev->add_option("--n", ev_n, "prompts")->capture_default_str();
    ev_task.add(ev);
    add_seed(ev);

    // analyze --------------------------------------------------------------
    auto* an = app.add_subcommand("analyze", "diagnostics");
    an->require_subcommand(1);
    auto* mmd = an->add_subcommand("mmd", "hidden-state MMD between the base model and a variant");
    std::string mmd_base, mmd_variant, mmd_data, mmd_layers, mmd_out, mmd_trace;
    std::size_t mmd_rows = 2000;
    mmd->add_option("--base", mmd_base, "base checkpoint")->required();
    mmd->add_option("--variant", mmd_variant, "checkpoint with removed blocks")->required();
    mmd->add_option("--data", mmd_data, "JSONL whose scored positions are compared")->required();
    mmd->add_option("--layers", mmd_layers, "e.g. 0..7 or 2,4,6 (default: all)");
    mmd->add_option("--max-rows", mmd_rows, "subsample each side to this many rows")->capture_default_str();
    mmd->add_option("--out", mmd_out, "CSV output");
    mmd->add_option("--trace", mmd_trace, "trace JSON to store the rows in");
    add_seed(mmd);

    auto* svd = an->add_subcommand("svd", "largest singular value of every layer matrix");
    std::string svd_model, svd_out;
    svd->add_option("--model", svd_model, "checkpoint")->required();
    svd->add_option("--out", svd_out, "CSV output");
    add_seed(svd);

    auto* eff = an->add_subcommand("efficiency", "time, parameter and memory savings");
    EfficiencyInput ei;
    eff->add_option("--params", ei.total_params, "total parameters")->required();
    eff->add_option("--layers", ei.n_layers, "decoder layers")->required();
    eff->add_option("--attn-frac", ei.attn_time_fraction, "fraction of time in attention")->capture_default_str();
    eff->add_option("--bytes", ei.bytes_per_param, "bytes per parameter")->capture_default_str();
    eff->add_option("--removed", ei.removed, "removed blocks")->required();

    auto* sp = an->add_subcommand("spearman", "rank correlation of two columns");
    std::string sp_xs, sp_ys, sp_csv, sp_xcol, sp_ycol;
    sp->add_option("--xs", sp_xs, "comma-separated values");
    sp->add_option("--ys", sp_ys, "comma-separated values");
    sp->add_option("--csv", sp_csv, "CSV file with a header row");
    sp->add_option("--x", sp_xcol, "column name in --csv");
    sp->add_option("--y", sp_ycol, "column name in --csv");

    // report ---------------------------------------------------------------
    auto* rep = app.add_subcommand("report", "CSV tables and SVG charts from a trace");
    std::string rep_trace, rep_dir;
    rep->add_option("--trace", rep_trace, "trace JSON")->required();
    rep->add_option("--out-dir", rep_dir, "output directory")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (!seed_given) seed = env_seed();
        const std::string command_line = join_args(args);

        if (*pre) {
            mc.d_ff = ffn > 0 ? ffn : 4 * mc.d_model;
            mc.vocab_size = Vocabulary::standard().size();
            po.seed = seed;
            po.on_step = [&](int step, double loss) {
                if ((step + 1) % 100 == 0) out << "step " << step + 1 << " loss " << fixed(loss, 4) << "\n";
            };
            const auto result = pretrain(mc, pre_task.spec(seed, Split::train), po);
            Checkpoint c;
            c.weights = result.weights;
            c.scales = ScaleSet::ones(mc.n_layers);
            c.provenance = {seed, command_line, ""};
            save_checkpoint(pre_out, c);
            out << "steps " << result.steps_run << " flexible_accuracy " << fixed(result.final_accuracy, 4) << "\n";
            out << "wrote " << pre_out << "\n";
            return 0;
        }

        if (*tea) {
            require_file(tea_model, "--model");
            const Checkpoint c = load_checkpoint(tea_model);
            const Weights w = full_weights(c);
            const auto items = gen_task_items(tea_task.spec(seed, Split::train), tea_n);
            std::vector<TaskItem> written;
            if (tea_source == "data") {
                written = items;
            } else {
                std::vector<std::string> prompts;
                for (const auto& it : items) prompts.push_back(it.prompt);
                std::size_t cut = 0;
                for (auto s : build_teacher_set(w, prompts)) {
                    // A special token inside a generation ends the answer text.
                    auto stop = std::find_if(s.target.begin(), s.target.end(), [](int t) { return t < 4; });
                    if (stop != s.target.end() - 1) ++cut;
                    s.target.erase(stop, s.target.end());
                    s.target.push_back(Vocabulary::eos);
                    written.push_back({s.prompt_text(), s.response_text()});
                }
                if (cut) out << cut << " generations cut at a special token\n";
            }
            save_jsonl(tea_out, written);
            out << "wrote " << written.size() << " records to " << tea_out << "\n";
            return 0;
        }

        if (*run) {
            require_file(run_model, "--model");
            require_file(run_data, "--data");
            if (!run_remove && !run_threshold) throw UsageError("one of --remove or --loss-threshold is required");
            const Strategy strategy = parse_strategy(run_strategy);
            if (strategy != Strategy::iterative && !run_remove) throw UsageError("--strategy " + run_strategy + " needs --remove");
            if (no_rescale && strategy != Strategy::random) throw UsageError("--no-rescale applies only to --strategy random");
            const Checkpoint base = load_checkpoint(run_model);
            const Weights w = full_weights(base);
            const auto data = to_samples(load_jsonl(run_data));
            if (data.empty()) throw UsageError("--data holds no records");

            HopscotchConfig cfg;
            cfg.target_removals = run_remove;
            cfg.loss_threshold = run_threshold;
            probe_cfg.batch_size = rescale_cfg.batch_size = batch;
            probe_cfg.max_len = rescale_cfg.max_len = static_cast<std::size_t>(w.config.max_seq_len);
            cfg.probe = probe_cfg;
            cfg.rescale = rescale_cfg;
            cfg.seed = seed;
            cfg.probe_parallel = probe_parallel;

            HopscotchResult res;
            if (strategy == Strategy::iterative) res = run_hopscotch(w, data, cfg);
            else if (strategy == Strategy::full_greedy) res = full_greedy(w, data, *run_remove, cfg);
            else res = random_removal(w, data, *run_remove, cfg, !no_rescale);

            if (run_eval_n > 0) {
                const auto items = gen_task_items(run_task.spec(derive_seed(seed, 0xe7a1), Split::eval), run_eval_n);
                auto stage = [&](const char* name, const ScaleSet& s) {
                    const auto r = evaluate_both(w, s, items);
                    res.trace.stages.push_back({name, {r.strict.accuracy(), r.flexible.accuracy(), items.size()}});
                };
                const int L = w.config.n_layers;
                stage("baseline", ScaleSet::ones(L));
                stage("noscale", pin_removed(ScaleSet::ones(L), res.mask));
                stage("scaled", res.scales);
            }

            Checkpoint c;
            c.weights = physically_remove(w, res.mask);
            c.scales = res.scales;
            c.mask = res.mask;
            c.provenance = {seed, command_line, file_sha256(run_model)};
            save_checkpoint(run_out, c);
            save_trace(run_trace, RunReport{res.trace, {}, ""});

            out << "removed";
            for (int l : res.trace.removed_layers()) out << ' ' << l;
            out << "\nstop: " << res.trace.stop_reason << "\n";
            for (const auto& s : res.trace.stages) {
                out << s.stage << " strict " << fixed(s.eval.strict, 4) << " flexible " << fixed(s.eval.flexible, 4) << "\n";
            }
            out << "wrote " << run_out << " and " << run_trace << "\n";
            return 0;
        }

        if (*ev) {
            require_file(ev_model, "--model");
            const Checkpoint c = load_checkpoint(ev_model);
            const auto items = gen_task_items(ev_task.spec(seed, Split::eval), ev_n);
            const auto r = evaluate_both(c.weights, c.scales, items);
            if (ev_metric != "flexible") out << "strict " << fixed(r.strict.accuracy(), 4) << " (" << r.strict.correct << "/" << r.strict.total << ")\n";
            if (ev_metric != "strict") out << "flexible " << fixed(r.flexible.accuracy(), 4) << " (" << r.flexible.correct << "/" << r.flexible.total << ")\n";
            return 0;
        }

        if (*mmd) {
            require_file(mmd_base, "--base");
            require_file(mmd_variant, "--variant");
            require_file(mmd_data, "--data");
            const Checkpoint base = load_checkpoint(mmd_base);
            const Checkpoint variant = load_checkpoint(mmd_variant);
            if (!(base.weights.config == variant.weights.config)) throw UsageError("--base and --variant configs differ");
            const Weights w = full_weights(base);
            std::vector<int> layers;
            if (mmd_layers.empty()) {
                for (int l = 0; l < w.config.n_layers; ++l) layers.push_back(l);
            } else {
                layers = parse_layer_list(mmd_layers);
            }
            const auto rows = mmd_report(w, to_samples(load_jsonl(mmd_data)), variant.scales, variant.mask, layers,
                                         MmdOptions{mmd_rows, seed});
            out << "layer,noscale,hopscotch\n";
            for (const auto& r : rows) out << r.layer << "," << fixed(r.noscale, 6) << "," << fixed(r.hopscotch, 6) << "\n";
            if (!mmd_out.empty()) write_text(mmd_out, mmd_csv(rows));
            if (!mmd_trace.empty()) {
                require_file(mmd_trace, "--trace");
                RunReport rep_in = load_trace(mmd_trace);
                rep_in.mmd = rows;
                save_trace(mmd_trace, rep_in);
            }
            return 0;
        }

        if (*svd) {
            require_file(svd_model, "--model");
            const Checkpoint c = load_checkpoint(svd_model);
            PowerOptions popt;
            popt.seed = seed;
            const auto rep = max_singular_values(c.weights, popt);
            std::string csv = csv_line({"layer", "matrix", "sigma_max"});
            for (const auto& e : rep.entries) csv += csv_line({std::to_string(e.layer), e.matrix, format_double(e.sigma)});
            out << csv;
            if (!svd_out.empty()) write_text(svd_out, csv);
            return 0;
        }

        if (*eff) {
            const auto r = efficiency_report(ei);
            out << "time_reduction_pct " << fixed(r.time_reduction_pct, 4) << "\n";
            out << "param_reduction_pct " << fixed(r.param_reduction_pct, 4) << "\n";
            out << "params_removed " << fixed(r.params_removed, 0) << "\n";
            out << "memory_reduction_gb " << fixed(r.memory_reduction_gb(), 4) << "\n";
            return 0;
        }

        if (*sp) {
            std::vector<double> xs, ys;
            auto parse_list = [](const std::string& s) {
                std::vector<double> v;
                std::stringstream ss(s);
                std::string part;
                while (std::getline(ss, part, ',')) {
                    char* end = nullptr;
                    const double d = std::strtod(part.c_str(), &end);
                    if (part.empty() || *end != '\0') throw UsageError("bad number '" + part + "'");
                    v.push_back(d);
                }
                return v;
            };
            if (!sp_csv.empty()) {
                if (!sp_xs.empty() || !sp_ys.empty()) throw UsageError("use either --csv or --xs/--ys");
                if (sp_xcol.empty() || sp_ycol.empty()) throw UsageError("--csv needs --x and --y");
                require_file(sp_csv, "--csv");
                std::stringstream text(read_file(sp_csv));
                std::string line;
                std::getline(text, line);
                auto split = [](std::string l) {
                    if (!l.empty() && l.back() == '\r') l.pop_back();
                    std::vector<std::string> f;
                    std::stringstream s(l);
                    std::string cell;
                    while (std::getline(s, cell, ',')) f.push_back(cell);
                    return f;
                };
                const auto head = split(line);
                const auto xi = std::find(head.begin(), head.end(), sp_xcol) - head.begin();
                const auto yi = std::find(head.begin(), head.end(), sp_ycol) - head.begin();
                if (xi == static_cast<long>(head.size()) || yi == static_cast<long>(head.size())) {
                    throw UsageError("column not found in " + sp_csv);
                }
                while (std::getline(text, line)) {
                    const auto f = split(line);
                    if (f.empty()) continue;
                    if (static_cast<long>(f.size()) <= std::max(xi, yi)) throw UsageError("short row in " + sp_csv);
                    xs.push_back(parse_list(f[static_cast<std::size_t>(xi)]).at(0));
                    ys.push_back(parse_list(f[static_cast<std::size_t>(yi)]).at(0));
                }
            } else {
                if (sp_xs.empty() || sp_ys.empty()) throw UsageError("spearman needs --xs and --ys, or --csv");
                xs = parse_list(sp_xs);
                ys = parse_list(sp_ys);
            }
            out << "spearman " << fixed(spearman(xs, ys), 6) << "\n";
            return 0;
        }

        if (*rep) {
            require_file(rep_trace, "--trace");
            const RunReport r = load_trace(rep_trace);
            std::filesystem::create_directories(rep_dir);
            const std::filesystem::path dir(rep_dir);
            write_text((dir / "scores.csv").string(), scores_csv(r.trace));
            write_text((dir / "steps.csv").string(), steps_csv(r.trace));
            write_text((dir / "stages.csv").string(), stages_csv(r.trace));
            write_text((dir / "mmd.csv").string(), mmd_csv(r.mmd));

            svg::Series final_loss{"loss after rescale", {}}, best_probe{"best probe score", {}};
            for (std::size_t i = 0; i < r.trace.steps.size(); ++i) {
                const auto& s = r.trace.steps[i];
                const double x = static_cast<double>(i + 1);
                final_loss.points.emplace_back(x, s.final_loss);
                if (!s.scores.empty()) {
                    double best = s.scores.front().score;
                    for (const auto& p : s.scores) best = std::min(best, p.score);
                    best_probe.points.emplace_back(x, best);
                }
            }
            write_text((dir / "loss_per_removal.svg").string(),
                       svg::line_chart({"Loss per removed block", "blocks removed", "average loss"}, {final_loss, best_probe}));

            std::vector<svg::BarGroup> groups;
            for (const auto& s : r.trace.stages) groups.push_back({s.stage, {s.eval.flexible, s.eval.strict}});
            write_text((dir / "stage_eval.svg").string(),
                       svg::bar_chart({"Accuracy per stage", "stage", "accuracy"}, {"flexible", "strict"}, groups));

            if (!r.mmd.empty()) {
                svg::Series ns{"noscale", {}}, hs{"hopscotch", {}};
                for (const auto& m : r.mmd) {
                    ns.points.emplace_back(m.layer, m.noscale);
                    hs.points.emplace_back(m.layer, m.hopscotch);
                }
                write_text((dir / "mmd.svg").string(), svg::line_chart({"Hidden-state MMD", "layer", "MMD^2"}, {ns, hs}));
            }
            out << "wrote report to " << rep_dir << "\n";
            return 0;
        }
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    err << "no subcommand\n";
    return 2;
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args, std::cout, std::cerr);
}

}  // namespace hopscotch
