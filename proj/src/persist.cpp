// SPDX-License-Identifier: Apache-2.0
#include "hopscotch/persist.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "hopscotch/errors.hpp"
#include "hopscotch/hash.hpp"
#include "json.hpp"

namespace hopscotch {

using ojson = nlohmann::ordered_json;

namespace {

constexpr char kMagic[8] = {'H', 'O', 'P', 'S', 'C', 'O', 'T', '1'};

std::size_t align8(std::size_t n) {
    return (n + 7) & ~std::size_t{7};
}

void put_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(const std::string& in, std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    return v;
}

void put_f32_le(char* dst, float f) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) dst[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
}

float get_f32_le(const char* src) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(src[i])) << (8 * i);
    return std::bit_cast<float>(bits);
}

[[noreturn]] void schema(const std::string& path, const std::string& msg) {
    throw FormatError(FormatErrc::schema, path + ": " + msg);
}

// Strict field access: every accessor names the JSON path on failure.
class Reader {
public:
    Reader(const ojson& j, std::string path) : j_(j), path_(std::move(path)) {}

    const ojson& json() const { return j_; }
    const std::string& path() const { return path_; }

    void expect_object(std::initializer_list<const char*> keys) const {
        if (!j_.is_object()) schema(path_, "expected an object");
        for (const char* k : keys)
            if (!j_.contains(k)) schema(path_ + "." + k, "missing field");
        for (const auto& [k, v] : j_.items()) {
            bool known = false;
            for (const char* want : keys) known = known || k == want;
            if (!known) schema(path_ + "." + k, "unknown field");
        }
    }

    Reader at(const char* key) const { return Reader(j_.at(key), path_ + "." + key); }
    Reader at(std::size_t i) const { return Reader(j_.at(i), path_ + "[" + std::to_string(i) + "]"); }

    std::size_t array_size() const {
        if (!j_.is_array()) schema(path_, "expected an array");
        return j_.size();
    }
    std::int64_t integer() const {
        if (!j_.is_number_integer()) schema(path_, "expected an integer");
        return j_.get<std::int64_t>();
    }
    std::uint64_t unsigned_integer() const {
        if (!j_.is_number_unsigned() && !(j_.is_number_integer() && j_.get<std::int64_t>() >= 0)) {
            schema(path_, "expected a nonnegative integer");
        }
        return j_.get<std::uint64_t>();
    }
    double number() const {
        if (!j_.is_number()) schema(path_, "expected a number");
        return j_.get<double>();
    }
    bool boolean() const {
        if (!j_.is_boolean()) schema(path_, "expected a boolean");
        return j_.get<bool>();
    }
    std::string string() const {
        if (!j_.is_string()) schema(path_, "expected a string");
        return j_.get<std::string>();
    }
    double decimal_string() const {
        const std::string s = string();
        char* end = nullptr;
        const double v = std::strtod(s.c_str(), &end);
        if (s.empty() || end != s.c_str() + s.size()) schema(path_, "expected a decimal number string");
        return v;
    }

private:
    const ojson& j_;
    std::string path_;
};

ojson config_json(const ModelConfig& c) {
    ojson j;
    j["n_layers"] = c.n_layers;
    j["d_model"] = c.d_model;
    j["n_heads"] = c.n_heads;
    j["d_ff"] = c.d_ff;
    j["vocab_size"] = c.vocab_size;
    j["max_seq_len"] = c.max_seq_len;
    j["norm_eps"] = format_double(c.norm_eps);
    return j;
}

ModelConfig parse_config(const Reader& r) {
    r.expect_object({"n_layers", "d_model", "n_heads", "d_ff", "vocab_size", "max_seq_len", "norm_eps"});
    ModelConfig c;
    auto as_int = [&](const char* k) {
        const auto v = r.at(k).integer();
        if (v <= 0 || v > (1 << 24)) schema(r.path() + "." + k, "out of range");
        return static_cast<int>(v);
    };
    c.n_layers = as_int("n_layers");
    c.d_model = as_int("d_model");
    c.n_heads = as_int("n_heads");
    c.d_ff = as_int("d_ff");
    c.vocab_size = as_int("vocab_size");
    c.max_seq_len = as_int("max_seq_len");
    c.norm_eps = r.at("norm_eps").decimal_string();
    try {
        c.validate();
    } catch (const std::exception& e) {
        schema(r.path(), e.what());
    }
    return c;
}

const char* kScaleKeys[4] = {"attn_gate", "attn_residual", "mlp_gate", "mlp_residual"};

std::vector<double>& scale_field(ScaleSet& s, int k) {
    switch (k) {
        case 0: return s.attn_gate;
        case 1: return s.attn_residual;
        case 2: return s.mlp_gate;
        default: return s.mlp_residual;
    }
}

}  // namespace

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------

std::string serialize_checkpoint(const Checkpoint& c) {
    const Weights& w = c.weights;
    w.validate();
    c.mask.validate(w.config.n_layers);
    check_scales(c.scales, c.mask, w.config.n_layers);
    for (int l = 0; l < w.config.n_layers; ++l) {
        if (!w.layers[static_cast<std::size_t>(l)].attention && !c.mask.contains(l)) {
            throw ContractError("layer " + std::to_string(l) + " has no attention weights but is not masked");
        }
    }

    ojson m;
    m["format_version"] = kCheckpointVersion;
    m["config"] = config_json(w.config);
    ojson scales;
    for (int k = 0; k < 4; ++k) {
        ojson arr = ojson::array();
        for (double v : scale_field(const_cast<ScaleSet&>(c.scales), k)) arr.push_back(format_double(v));
        scales[kScaleKeys[k]] = arr;
    }
    m["scales"] = scales;
    m["mask"] = ojson(std::vector<int>(c.mask.removed.begin(), c.mask.removed.end()));
    m["provenance"] = {{"seed", c.provenance.seed},
                       {"command_line", c.provenance.command_line},
                       {"parent_hash", c.provenance.parent_hash}};
    ojson tensors = ojson::array();
    std::vector<const Tensor*> order;
    std::size_t offset = 0;
    w.for_each_tensor([&](const std::string& name, const Tensor& t) {
        const std::size_t bytes = t.size() * 4;
        tensors.push_back({{"name", name},
                           {"shape", t.shape()},
                           {"dtype", "f32"},
                           {"byte_offset", offset},
                           {"byte_length", bytes}});
        order.push_back(&t);
        offset = align8(offset + bytes);
    });
    m["tensors"] = tensors;

    std::string manifest = m.dump();
    manifest.append(align8(manifest.size()) - manifest.size(), ' ');

    std::string out(kMagic, sizeof kMagic);
    put_u64_le(out, manifest.size());
    out += manifest;
    const std::size_t payload_start = out.size();
    out.resize(payload_start + offset, '\0');
    std::size_t at = payload_start;
    for (const Tensor* t : order) {
        for (std::size_t i = 0; i < t->size(); ++i) put_f32_le(&out[at + 4 * i], (*t)[i]);
        at = payload_start + align8(at - payload_start + t->size() * 4);
    }
    return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
    if (bytes.size() < 8) throw FormatError(FormatErrc::truncated, "file shorter than the magic");
    if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw FormatError(FormatErrc::bad_magic, "not a checkpoint file");
    if (bytes.size() < 16) throw FormatError(FormatErrc::truncated, "missing manifest length");
    const std::uint64_t mlen = get_u64_le(bytes, 8);
    if (mlen > bytes.size() - 16) {
        throw FormatError(FormatErrc::truncated, "manifest length " + std::to_string(mlen) + " exceeds file size");
    }
    ojson m;
    try {
        m = ojson::parse(bytes.substr(16, mlen));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatErrc::schema, std::string("manifest is not valid JSON: ") + e.what());
    }
    const Reader root(m, "manifest");
    if (!m.is_object() || !m.contains("format_version")) schema("manifest.format_version", "missing field");
    const auto version = root.at("format_version").integer();
    if (version != kCheckpointVersion) {
        throw FormatError(FormatErrc::unknown_version, "format_version " + std::to_string(version));
    }
    root.expect_object({"format_version", "config", "scales", "mask", "provenance", "tensors"});

    Checkpoint c;
    const ModelConfig cfg = parse_config(root.at("config"));
    const auto L = static_cast<std::size_t>(cfg.n_layers);

    const Reader sc = root.at("scales");
    sc.expect_object({kScaleKeys[0], kScaleKeys[1], kScaleKeys[2], kScaleKeys[3]});
    for (int k = 0; k < 4; ++k) {
        const Reader arr = sc.at(kScaleKeys[k]);
        if (arr.array_size() != L) schema(arr.path(), "expected " + std::to_string(L) + " entries");
        auto& dst = scale_field(c.scales, k);
        for (std::size_t i = 0; i < L; ++i) dst.push_back(arr.at(i).decimal_string());
    }

    const Reader mk = root.at("mask");
    for (std::size_t i = 0; i < mk.array_size(); ++i) {
        const auto l = mk.at(i).integer();
        if (l < 0 || l >= cfg.n_layers) schema(mk.at(i).path(), "layer out of range");
        if (!c.mask.removed.insert(static_cast<int>(l)).second) schema(mk.at(i).path(), "duplicate layer");
    }

    const Reader pv = root.at("provenance");
    pv.expect_object({"seed", "command_line", "parent_hash"});
    c.provenance.seed = pv.at("seed").unsigned_integer();
    c.provenance.command_line = pv.at("command_line").string();
    c.provenance.parent_hash = pv.at("parent_hash").string();

    try {
        check_scales(c.scales, c.mask, cfg.n_layers);
    } catch (const std::exception& e) {
        schema("manifest.scales", e.what());
    }

    // Expected tensors, in canonical order; attention may be absent for masked layers.
    Weights& w = c.weights;
    w.config = cfg;
    w.layers.resize(L);
    const std::size_t payload_start = 16 + mlen;
    const std::size_t payload_size = bytes.size() - payload_start;
    const Reader ts = root.at("tensors");
    const std::size_t count = ts.array_size();
    std::size_t next = 0;
    std::size_t expected_end = 0;

    auto read_tensor = [&](const std::string& name, Shape shape, bool optional) -> std::optional<Tensor> {
        const bool match = next < count && ts.at(next).json().is_object() && ts.at(next).json().contains("name") &&
                           ts.at(next).json()["name"] == name;
        if (!match) {
            if (optional) return std::nullopt;
            schema(ts.path(), "expected tensor '" + name + "' at position " + std::to_string(next));
        }
        const Reader t = ts.at(next++);
        t.expect_object({"name", "shape", "dtype", "byte_offset", "byte_length"});
        if (t.at("dtype").string() != "f32") schema(t.at("dtype").path(), "only f32 is supported");
        const Reader sh = t.at("shape");
        Shape got;
        for (std::size_t i = 0; i < sh.array_size(); ++i) got.push_back(static_cast<std::size_t>(sh.at(i).unsigned_integer()));
        if (got != shape) schema(sh.path(), "expected " + shape_string(shape) + ", got " + shape_string(got));
        const std::uint64_t off = t.at("byte_offset").unsigned_integer();
        const std::uint64_t len = t.at("byte_length").unsigned_integer();
        if (len != shape_size(shape) * 4) {
            throw FormatError(FormatErrc::length_mismatch, t.path() + ": byte_length " + std::to_string(len) +
                                                               " does not match shape " + shape_string(shape));
        }
        if (off != expected_end) {
            throw FormatError(FormatErrc::length_mismatch,
                              t.path() + ": byte_offset " + std::to_string(off) + ", expected " + std::to_string(expected_end));
        }
        if (off + len > payload_size) {
            throw FormatError(FormatErrc::truncated, t.path() + ": payload ends at " + std::to_string(payload_size) +
                                                         " bytes, tensor needs " + std::to_string(off + len));
        }
        Tensor out(shape);
        const char* src = bytes.data() + payload_start + off;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = get_f32_le(src + 4 * i);
        expected_end = align8(off + len);
        return out;
    };

    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto f = static_cast<std::size_t>(cfg.d_ff);
    const auto v = static_cast<std::size_t>(cfg.vocab_size);
    const auto n = static_cast<std::size_t>(cfg.max_seq_len);
    w.token_embedding = *read_tensor("tok_emb", {v, d}, false);
    w.position_embedding = *read_tensor("pos_emb", {n, d}, false);
    for (std::size_t l = 0; l < L; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        auto norm = read_tensor(p + "attn.norm", {d}, c.mask.contains(static_cast<int>(l)));
        if (norm) {
            AttentionWeights<float> a;
            a.norm = std::move(*norm);
            a.wq = *read_tensor(p + "attn.wq", {d, d}, false);
            a.wk = *read_tensor(p + "attn.wk", {d, d}, false);
            a.wv = *read_tensor(p + "attn.wv", {d, d}, false);
            a.wo = *read_tensor(p + "attn.wo", {d, d}, false);
            w.layers[l].attention = std::move(a);
        }
        w.layers[l].mlp_norm = *read_tensor(p + "mlp.norm", {d}, false);
        w.layers[l].w_up = *read_tensor(p + "mlp.up", {d, f}, false);
        w.layers[l].w_down = *read_tensor(p + "mlp.down", {f, d}, false);
    }
    w.final_norm = *read_tensor("final_norm", {d}, false);
    w.head = *read_tensor("head", {d, v}, false);
    if (next != count) schema(ts.at(next).path(), "unexpected tensor");
    if (expected_end != payload_size) {
        throw FormatError(FormatErrc::length_mismatch, "payload holds " + std::to_string(payload_size) +
                                                           " bytes, manifest describes " + std::to_string(expected_end));
    }
    return c;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatErrc::io, "cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError(FormatErrc::io, "cannot write " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw FormatError(FormatErrc::io, "write failed for " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw FormatError(FormatErrc::io, "cannot rename onto " + path);
    }
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    write_file_atomic(path, serialize_checkpoint(c));
}

Checkpoint load_checkpoint(const std::string& path) {
    return parse_checkpoint(read_file(path));
}

std::string file_sha256(const std::string& path) {
    return sha256_hex(read_file(path));
}

// ---------------------------------------------------------------------------

namespace {

ojson eval_json(const StepEval& e) {
    return {{"strict", e.strict}, {"flexible", e.flexible}, {"count", e.count}};
}

StepEval parse_eval(const Reader& r) {
    r.expect_object({"strict", "flexible", "count"});
    return {r.at("strict").number(), r.at("flexible").number(), static_cast<std::size_t>(r.at("count").unsigned_integer())};
}

ojson report_body(const RunReport& r) {
    const RemovalTrace& t = r.trace;
    ojson j;
    j["format"] = "hopscotch-trace";
    j["version"] = kTraceVersion;
    j["strategy"] = to_string(t.strategy);
    j["n_layers"] = t.n_layers;
    j["seed"] = t.seed;
    j["stop_reason"] = t.stop_reason;
    ojson steps = ojson::array();
    for (const auto& s : t.steps) {
        ojson js;
        ojson scores = ojson::array();
        for (const auto& p : s.scores) scores.push_back({{"layer", p.layer}, {"score", p.score}});
        js["scores"] = scores;
        js["chosen"] = s.chosen;
        js["rescale_losses"] = s.rescale_losses;
        js["final_loss"] = s.final_loss;
        js["accepted"] = s.accepted;
        js["probe_seed"] = s.probe_seed;
        js["rescale_seed"] = s.rescale_seed;
        js["eval"] = s.eval ? eval_json(*s.eval) : ojson(nullptr);
        steps.push_back(js);
    }
    j["steps"] = steps;
    ojson stages = ojson::array();
    for (const auto& s : t.stages) stages.push_back({{"stage", s.stage}, {"eval", eval_json(s.eval)}});
    j["stages"] = stages;
    ojson mmd = ojson::array();
    for (const auto& row : r.mmd) mmd.push_back({{"layer", row.layer}, {"noscale", row.noscale}, {"hopscotch", row.hopscotch}});
    j["mmd"] = mmd;
    return j;
}

std::string body_hash(const ojson& body) {
    return sha256_hex(body.dump());
}

}  // namespace

std::string trace_content_hash(const RunReport& r) {
    return body_hash(report_body(r));
}

std::string serialize_trace(const RunReport& r) {
    ojson j = report_body(r);
    j["content_hash"] = body_hash(j);
    return j.dump(2) + "\n";
}

RunReport parse_trace(const std::string& text) {
    ojson j;
    try {
        j = ojson::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatErrc::schema, std::string("trace is not valid JSON: ") + e.what());
    }
    const Reader root(j, "trace");
    if (!j.is_object()) schema("trace", "expected an object");
    if (!j.contains("version")) schema("trace.version", "missing field");
    if (root.at("version").integer() != kTraceVersion) {
        throw FormatError(FormatErrc::unknown_version, "trace version " + j["version"].dump());
    }
    root.expect_object({"format", "version", "strategy", "n_layers", "seed", "stop_reason", "steps", "stages", "mmd",
                        "content_hash"});
    if (root.at("format").string() != "hopscotch-trace") schema("trace.format", "expected \"hopscotch-trace\"");

    RunReport r;
    RemovalTrace& t = r.trace;
    try {
        t.strategy = parse_strategy(root.at("strategy").string());
    } catch (const ContractError& e) {
        schema("trace.strategy", e.what());
    }
    t.n_layers = static_cast<int>(root.at("n_layers").integer());
    t.seed = root.at("seed").unsigned_integer();
    t.stop_reason = root.at("stop_reason").string();

    const Reader steps = root.at("steps");
    for (std::size_t i = 0; i < steps.array_size(); ++i) {
        const Reader s = steps.at(i);
        s.expect_object({"scores", "chosen", "rescale_losses", "final_loss", "accepted", "probe_seed", "rescale_seed", "eval"});
        RemovalStep step;
        const Reader sc = s.at("scores");
        for (std::size_t k = 0; k < sc.array_size(); ++k) {
            const Reader p = sc.at(k);
            p.expect_object({"layer", "score"});
            step.scores.push_back({static_cast<int>(p.at("layer").integer()), p.at("score").number()});
        }
        const Reader ch = s.at("chosen");
        for (std::size_t k = 0; k < ch.array_size(); ++k) step.chosen.push_back(static_cast<int>(ch.at(k).integer()));
        const Reader rl = s.at("rescale_losses");
        for (std::size_t k = 0; k < rl.array_size(); ++k) step.rescale_losses.push_back(rl.at(k).number());
        step.final_loss = s.at("final_loss").number();
        step.accepted = s.at("accepted").boolean();
        step.probe_seed = s.at("probe_seed").unsigned_integer();
        step.rescale_seed = s.at("rescale_seed").unsigned_integer();
        if (!s.at("eval").json().is_null()) step.eval = parse_eval(s.at("eval"));
        t.steps.push_back(std::move(step));
    }
    const Reader stages = root.at("stages");
    for (std::size_t i = 0; i < stages.array_size(); ++i) {
        const Reader s = stages.at(i);
        s.expect_object({"stage", "eval"});
        t.stages.push_back({s.at("stage").string(), parse_eval(s.at("eval"))});
    }
    const Reader mmd = root.at("mmd");
    for (std::size_t i = 0; i < mmd.array_size(); ++i) {
        const Reader m = mmd.at(i);
        m.expect_object({"layer", "noscale", "hopscotch"});
        r.mmd.push_back({static_cast<int>(m.at("layer").integer()), m.at("noscale").number(), m.at("hopscotch").number()});
    }
    r.content_hash = root.at("content_hash").string();
    const std::string recomputed = trace_content_hash(r);
    if (recomputed != r.content_hash) {
        schema("trace.content_hash", "stored " + r.content_hash + " but content hashes to " + recomputed);
    }
    return r;
}

void save_trace(const std::string& path, const RunReport& r) {
    write_file_atomic(path, serialize_trace(r));
}

RunReport load_trace(const std::string& path) {
    return parse_trace(read_file(path));
}

// ---------------------------------------------------------------------------

std::string csv_field(const std::string& value) {
    if (value.find_first_of(",\"\r\n") == std::string::npos) return value;
    std::string out = "\"";
    for (char c : value) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string csv_line(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ',';
        out += csv_field(fields[i]);
    }
    return out + "\r\n";
}

std::string scores_csv(const RemovalTrace& t) {
    std::string out = csv_line({"step", "layer", "score", "chosen"});
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
        const auto& s = t.steps[i];
        for (const auto& p : s.scores) {
            const bool chosen = std::find(s.chosen.begin(), s.chosen.end(), p.layer) != s.chosen.end();
            out += csv_line({std::to_string(i), std::to_string(p.layer), format_double(p.score), chosen ? "1" : "0"});
        }
    }
    return out;
}

std::string steps_csv(const RemovalTrace& t) {
    std::string out = csv_line({"step", "chosen", "final_loss", "accepted", "strict", "flexible"});
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
        const auto& s = t.steps[i];
        std::string chosen;
        for (std::size_t k = 0; k < s.chosen.size(); ++k) chosen += (k ? " " : "") + std::to_string(s.chosen[k]);
        out += csv_line({std::to_string(i), chosen, format_double(s.final_loss), s.accepted ? "1" : "0",
                         s.eval ? format_double(s.eval->strict) : "", s.eval ? format_double(s.eval->flexible) : ""});
    }
    return out;
}

std::string stages_csv(const RemovalTrace& t) {
    std::string out = csv_line({"stage", "strict", "flexible", "count"});
    for (const auto& s : t.stages) {
        out += csv_line({s.stage, format_double(s.eval.strict), format_double(s.eval.flexible), std::to_string(s.eval.count)});
    }
    return out;
}

std::string mmd_csv(const std::vector<MmdRow>& rows) {
    std::string out = csv_line({"layer", "noscale", "hopscotch"});
    for (const auto& r : rows) out += csv_line({std::to_string(r.layer), format_double(r.noscale), format_double(r.hopscotch)});
    return out;
}

}  // namespace hopscotch
