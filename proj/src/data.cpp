// SPDX-License-Identifier: Apache-2.0
#include "hopscotch/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"

#include "hopscotch/errors.hpp"

namespace hopscotch {

namespace {

constexpr const char* kSymbols = " 0123456789+-*=%,?ABCDEFGHIJKLMNOPQRSTUVWXYZ";

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

Split split_of(std::string_view prompt) {
    return fnv1a(prompt) % 5 == 0 ? Split::eval : Split::train;
}

long long reduce(long long v, int modulus) {
    const long long m = modulus;
    return ((v % m) + m) % m;
}

long long apply_op(long long a, char op, long long b, int modulus) {
    switch (op) {
        case '+': return reduce(a + b, modulus);
        case '-': return reduce(a - b, modulus);
        case '*': return reduce(a * b, modulus);
        default: throw ContractError(std::string("unknown operator '") + op + "'");
    }
}

TaskItem draw_item(const TaskSpec& spec, std::mt19937_64& rng) {
    auto uniform = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    TaskItem item;
    switch (spec.kind) {
        case TaskKind::arith_chain: {
            static constexpr char kOps[] = {'+', '-', '*'};
            const int steps = uniform(spec.min_chain, spec.max_chain);
            long long acc = uniform(0, spec.operand_max);
            std::string prompt = std::to_string(acc);
            std::string scratch;
            for (int i = 0; i < steps; ++i) {
                const char op = kOps[uniform(0, 2)];
                const long long rhs = uniform(0, spec.operand_max);
                const long long next = apply_op(acc, op, rhs, spec.modulus);
                prompt += op + std::to_string(rhs);
                if (i) scratch += ',';
                scratch += std::to_string(acc) + op + std::to_string(rhs) + "=" + std::to_string(next);
                acc = next;
            }
            item.prompt = prompt + "=?";
            item.response = scratch + " ANS " + std::to_string(acc);
            break;
        }
        case TaskKind::copy:
        case TaskKind::reverse: {
            const int len = uniform(spec.min_length, spec.max_length);
            std::string s;
            for (int i = 0; i < len; ++i) s.push_back(static_cast<char>('A' + uniform(0, 25)));
            std::string out = s;
            if (spec.kind == TaskKind::reverse) std::reverse(out.begin(), out.end());
            item.prompt = (spec.kind == TaskKind::copy ? "COPY " : "REV ") + s;
            item.response = out;
            break;
        }
        case TaskKind::parity: {
            const int len = uniform(spec.min_length, spec.max_length);
            std::string bits;
            int ones = 0;
            for (int i = 0; i < len; ++i) {
                const int b = uniform(0, 1);
                ones += b;
                bits.push_back(static_cast<char>('0' + b));
            }
            item.prompt = "PAR " + bits;
            item.response = "ANS " + std::to_string(ones % 2);
            break;
        }
    }
    return item;
}

}  // namespace

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() : symbols_(kSymbols) {
    std::fill(std::begin(lookup_), std::end(lookup_), -1);
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
        lookup_[static_cast<unsigned char>(symbols_[i])] = kSpecials + static_cast<int>(i);
    }
}

const Vocabulary& Vocabulary::standard() {
    static const Vocabulary vocab;
    return vocab;
}

bool Vocabulary::covers(std::string_view text) const {
    return std::all_of(text.begin(), text.end(),
                       [&](char c) { return lookup_[static_cast<unsigned char>(c)] >= 0; });
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (char c : text) {
        const int id = lookup_[static_cast<unsigned char>(c)];
        if (id < 0) throw IndexError(std::string("character '") + c + "' is not in the vocabulary");
        ids.push_back(id);
    }
    return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
    static constexpr const char* kNames[] = {"<pad>", "<bos>", "<eos>", "<sep>"};
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= size()) throw IndexError("token id " + std::to_string(id) + " out of range");
        if (id < kSpecials) out += kNames[id];
        else out.push_back(symbols_[static_cast<std::size_t>(id - kSpecials)]);
    }
    return out;
}

std::string Sample::response_text() const {
    std::span<const int> ids(target);
    if (!ids.empty() && ids.back() == Vocabulary::eos) ids = ids.first(ids.size() - 1);
    return Vocabulary::standard().decode(ids);
}

std::string Sample::prompt_text() const {
    std::span<const int> ids(prompt);
    if (!ids.empty() && ids.front() == Vocabulary::bos) ids = ids.subspan(1);
    if (!ids.empty() && ids.back() == Vocabulary::sep) ids = ids.first(ids.size() - 1);
    return Vocabulary::standard().decode(ids);
}

Sample make_sample(std::string_view prompt, std::string_view response) {
    const auto& vocab = Vocabulary::standard();
    Sample s;
    s.prompt.push_back(Vocabulary::bos);
    const auto p = vocab.encode(prompt);
    s.prompt.insert(s.prompt.end(), p.begin(), p.end());
    s.prompt.push_back(Vocabulary::sep);
    s.target = vocab.encode(response);
    s.target.push_back(Vocabulary::eos);
    s.loss_mask.assign(s.target.size(), 1);
    return s;
}

const char* to_string(TaskKind kind) {
    switch (kind) {
        case TaskKind::arith_chain: return "arith";
        case TaskKind::copy: return "copy";
        case TaskKind::reverse: return "reverse";
        case TaskKind::parity: return "parity";
    }
    return "?";
}

TaskKind parse_task_kind(std::string_view name) {
    if (name == "arith" || name == "arith-chain") return TaskKind::arith_chain;
    if (name == "copy") return TaskKind::copy;
    if (name == "reverse") return TaskKind::reverse;
    if (name == "parity") return TaskKind::parity;
    throw ContractError("unknown task '" + std::string(name) + "'");
}

void TaskSpec::validate() const {
    if (kind == TaskKind::arith_chain) {
        if (min_chain < 1 || max_chain < min_chain) throw ContractError("invalid chain length range");
        if (operand_max < 0) throw ContractError("operand_max must be nonnegative");
        if (modulus < 2) throw ContractError("modulus must be at least 2");
    } else if (min_length < 1 || max_length < min_length) {
        throw ContractError("invalid string length range");
    }
}

std::vector<TaskItem> gen_task_items(const TaskSpec& spec, std::size_t count) {
    spec.validate();
    if (count == 0) throw ContractError("gen_task needs count > 0");
    std::mt19937_64 rng(spec.seed);
    std::vector<TaskItem> items;
    items.reserve(count);
    std::size_t attempts = 0;
    const std::size_t limit = 1000 * count + 10000;
    while (items.size() < count) {
        if (++attempts > limit) throw ContractError("task spec cannot produce prompts for the requested split");
        TaskItem item = draw_item(spec, rng);
        if (split_of(item.prompt) == spec.split) items.push_back(std::move(item));
    }
    return items;
}

std::vector<Sample> gen_task(const TaskSpec& spec, std::size_t count) {
    return to_samples(gen_task_items(spec, count));
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

long long eval_arith_left_to_right(std::string_view expr, int modulus) {
    std::size_t i = 0;
    auto number = [&]() {
        if (i >= expr.size() || expr[i] < '0' || expr[i] > '9') throw ContractError("expected a digit");
        long long v = 0;
        while (i < expr.size() && expr[i] >= '0' && expr[i] <= '9') v = 10 * v + (expr[i++] - '0');
        return v;
    };
    long long acc = reduce(number(), modulus);
    while (i < expr.size()) {
        const char op = expr[i++];
        acc = apply_op(acc, op, number(), modulus);
    }
    return acc;
}

std::optional<long long> last_integer(std::string_view text) {
    std::size_t end = text.size();
    while (end > 0 && !(text[end - 1] >= '0' && text[end - 1] <= '9')) --end;
    if (end == 0) return std::nullopt;
    std::size_t begin = end;
    while (begin > 0 && text[begin - 1] >= '0' && text[begin - 1] <= '9') --begin;
    const auto digits = text.substr(begin, std::min<std::size_t>(end - begin, 18));
    return std::stoll(std::string(digits));
}

// ---------------------------------------------------------------------------

namespace {

int argmax_row(const Tensor& logits, std::size_t row) {
    const auto r = logits.row(row);
    int best = 0;
    for (std::size_t j = 1; j < r.size(); ++j)
        if (r[j] > r[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
    return best;
}

}  // namespace

std::vector<int> generate_greedy(const Weights& w, const ScaleSet& s, std::span<const int> prompt,
                                 std::size_t max_new) {
    if (prompt.empty()) throw ContractError("generate_greedy needs a nonempty prompt");
    std::vector<int> seq(prompt.begin(), prompt.end());
    std::vector<int> out;
    const auto limit = static_cast<std::size_t>(w.config.max_seq_len);
    while (out.size() < max_new && seq.size() < limit) {
        const auto res = model_forward<float>(seq, w, s);
        const int next = argmax_row(res.logits, seq.size() - 1);
        if (next == Vocabulary::eos) break;
        out.push_back(next);
        seq.push_back(next);
    }
    return out;
}

std::vector<std::vector<int>> generate_greedy_batch(const Weights& w, const ScaleSet& s,
                                                    const std::vector<std::vector<int>>& prompts,
                                                    std::size_t max_new) {
    const auto limit = static_cast<std::size_t>(w.config.max_seq_len);
    std::vector<std::vector<int>> seqs(prompts.begin(), prompts.end());
    std::vector<std::vector<int>> out(prompts.size());
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        if (prompts[i].empty()) throw ContractError("generate_greedy needs a nonempty prompt");
        if (max_new > 0 && prompts[i].size() < limit) active.push_back(i);
    }
    BlockMask pinned;
    for (int l = 0; l < s.layers(); ++l)
        if (s.attn_gate[static_cast<std::size_t>(l)] == 0.0) pinned.removed.insert(l);
    while (!active.empty()) {
        std::size_t seq_len = 0;
        for (auto i : active) seq_len = std::max(seq_len, seqs[i].size());
        TokenGrid grid{active.size(), seq_len, std::vector<int>(active.size() * seq_len, Vocabulary::pad)};
        for (std::size_t r = 0; r < active.size(); ++r)
            std::copy(seqs[active[r]].begin(), seqs[active[r]].end(), grid.ids.begin() + r * seq_len);
        Graph<float> g;
        const auto bw = bind_weights(g, w, false);
        const auto bs = bind_scales(g, s, pinned, false);
        const Tensor& logits = g.value(forward(g, w.config, bw, bs, grid).logits);
        std::vector<std::size_t> still;
        for (std::size_t r = 0; r < active.size(); ++r) {
            const std::size_t i = active[r];
            const int next = argmax_row(logits, r * seq_len + seqs[i].size() - 1);
            if (next == Vocabulary::eos) continue;
            out[i].push_back(next);
            seqs[i].push_back(next);
            if (out[i].size() < max_new && seqs[i].size() < limit) still.push_back(i);
        }
        active = std::move(still);
    }
    return out;
}

std::vector<Sample> build_teacher_set(const Weights& w, const std::vector<std::string>& prompts) {
    if (prompts.empty()) return {};
    std::vector<std::vector<int>> encoded;
    for (const auto& p : prompts) encoded.push_back(make_sample(p, "").prompt);
    const ScaleSet ones = ScaleSet::ones(w.config.n_layers);
    const auto limit = static_cast<std::size_t>(w.config.max_seq_len);
    std::vector<Sample> out;
    out.reserve(prompts.size());
    const auto gens = generate_greedy_batch(w, ones, encoded, limit);
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        Sample s;
        s.prompt = encoded[i];
        s.target = gens[i];
        s.target.push_back(Vocabulary::eos);
        s.loss_mask.assign(s.target.size(), 1);
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------

std::size_t PackedBatch::scored() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

std::vector<double> PackedBatch::per_sample_weights() const {
    std::vector<double> weights(mask.size(), 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
        std::size_t count = 0;
        for (std::size_t t = 0; t < seq; ++t) count += mask[b * seq + t];
        if (!count) continue;
        const double wgt = 1.0 / (static_cast<double>(count) * static_cast<double>(batch));
        for (std::size_t t = 0; t < seq; ++t)
            if (mask[b * seq + t]) weights[b * seq + t] = wgt;
    }
    return weights;
}

std::vector<PackedBatch> pack_batches(const std::vector<Sample>& samples, const PackOptions& options) {
    if (options.batch_size == 0) throw ContractError("batch_size must be positive");
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (options.shuffle_seed) {
        std::mt19937_64 rng(*options.shuffle_seed);
        std::shuffle(order.begin(), order.end(), rng);
    }

    struct Row {
        std::vector<int> input, label;
        std::vector<std::uint8_t> mask;
    };
    auto make_row = [&](std::size_t idx) {
        const Sample& s = samples[idx];
        if (s.prompt.empty() || s.target.empty() || s.loss_mask.size() != s.target.size()) {
            throw ContractError("sample " + std::to_string(idx) + " is malformed");
        }
        std::vector<int> full = s.prompt;
        full.insert(full.end(), s.target.begin(), s.target.end());
        std::vector<std::uint8_t> scored(full.size(), 0);
        std::copy(s.loss_mask.begin(), s.loss_mask.end(), scored.begin() + static_cast<std::ptrdiff_t>(s.prompt.size()));
        std::size_t len = full.size() - 1;
        if (len > options.max_len) {
            if (!options.truncate) {
                throw ContractError("sample " + std::to_string(idx) + " needs " + std::to_string(len) +
                                    " positions, max_len is " + std::to_string(options.max_len));
            }
            len = options.max_len;
        }
        Row row;
        row.input.assign(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(len));
        row.label.assign(full.begin() + 1, full.begin() + static_cast<std::ptrdiff_t>(len) + 1);
        row.mask.assign(scored.begin() + 1, scored.begin() + static_cast<std::ptrdiff_t>(len) + 1);
        if (std::find(row.mask.begin(), row.mask.end(), 1) == row.mask.end()) {
            throw ContractError("sample " + std::to_string(idx) + " has no scored position within max_len");
        }
        return row;
    };

    std::vector<PackedBatch> batches;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
        const std::size_t end = std::min(order.size(), start + options.batch_size);
        std::vector<Row> rows;
        std::size_t seq = 0;
        for (std::size_t i = start; i < end; ++i) {
            rows.push_back(make_row(order[i]));
            seq = std::max(seq, rows.back().input.size());
        }
        PackedBatch pb;
        pb.batch = rows.size();
        pb.seq = seq;
        pb.tokens.assign(pb.batch * seq, Vocabulary::pad);
        pb.targets.assign(pb.batch * seq, Vocabulary::pad);
        pb.mask.assign(pb.batch * seq, 0);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            std::copy(rows[r].input.begin(), rows[r].input.end(), pb.tokens.begin() + static_cast<std::ptrdiff_t>(r * seq));
            std::copy(rows[r].label.begin(), rows[r].label.end(), pb.targets.begin() + static_cast<std::ptrdiff_t>(r * seq));
            std::copy(rows[r].mask.begin(), rows[r].mask.end(), pb.mask.begin() + static_cast<std::ptrdiff_t>(r * seq));
            pb.sample_index.push_back(order[start + r]);
        }
        batches.push_back(std::move(pb));
    }
    return batches;
}

// ---------------------------------------------------------------------------

void save_jsonl(const std::string& path, const std::vector<TaskItem>& items) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError(FormatErrc::io, "cannot write " + path);
        for (const auto& item : items) {
            nlohmann::json rec;
            rec["prompt"] = item.prompt;
            rec["response"] = item.response;
            out << rec.dump() << '\n';
        }
        if (!out) throw FormatError(FormatErrc::io, "write failed for " + path);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw FormatError(FormatErrc::io, "cannot rename onto " + path);
}

std::vector<TaskItem> load_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatErrc::io, "cannot read " + path);
    std::vector<TaskItem> items;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(FormatErrc::schema, path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!rec.is_object() || !rec.contains("prompt") || !rec.contains("response") ||
            !rec["prompt"].is_string() || !rec["response"].is_string() || rec.size() != 2) {
            throw FormatError(FormatErrc::schema, path + ":" + std::to_string(lineno) +
                                                      ": expected {\"prompt\": string, \"response\": string}");
        }
        items.push_back({rec["prompt"].get<std::string>(), rec["response"].get<std::string>()});
    }
    return items;
}

std::vector<TaskItem> to_items(const std::vector<Sample>& samples) {
    std::vector<TaskItem> items;
    items.reserve(samples.size());
    for (const auto& s : samples) items.push_back({s.prompt_text(), s.response_text()});
    return items;
}

std::vector<Sample> to_samples(const std::vector<TaskItem>& items) {
    std::vector<Sample> samples;
    samples.reserve(items.size());
    for (const auto& item : items) samples.push_back(make_sample(item.prompt, item.response));
    return samples;
}

}  // namespace hopscotch
