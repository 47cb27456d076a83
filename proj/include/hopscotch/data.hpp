// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hopscotch/model.hpp"

namespace hopscotch {

/// Fixed character-level symbol table. Ids 0..3 are PAD, BOS, EOS, SEP.
class Vocabulary {
public:
    static constexpr int pad = 0;
    static constexpr int bos = 1;
    static constexpr int eos = 2;
    static constexpr int sep = 3;

    static const Vocabulary& standard();

    int size() const { return static_cast<int>(kSpecials + symbols_.size()); }
    bool covers(std::string_view text) const;
    /// Throws IndexError on a character outside the table.
    std::vector<int> encode(std::string_view text) const;
    /// Special tokens render as <pad>, <bos>, <eos>, <sep>.
    std::string decode(std::span<const int> ids) const;

private:
    static constexpr int kSpecials = 4;
    Vocabulary();
    std::string symbols_;
    int lookup_[256];
};

struct Sample {
    std::vector<int> prompt;  // BOS, prompt characters, SEP
    std::vector<int> target;  // response characters, EOS
    std::vector<std::uint8_t> loss_mask;  // one bit per target token

    /// Response text without the trailing EOS.
    std::string response_text() const;
    std::string prompt_text() const;
};

Sample make_sample(std::string_view prompt, std::string_view response);

enum class TaskKind { arith_chain, copy, reverse, parity };
enum class Split { train, eval };

const char* to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view name);

struct TaskSpec {
    TaskKind kind = TaskKind::arith_chain;
    int min_chain = 1;  // operators per arithmetic prompt
    int max_chain = 2;
    int operand_max = 9;  // operands drawn from [0, operand_max]
    int modulus = 10;
    int min_length = 3;  // string length for copy / reverse / parity
    int max_length = 6;
    std::uint64_t seed = 0;
    Split split = Split::train;

    void validate() const;
};

struct TaskItem {
    std::string prompt;
    std::string response;
};

/// Deterministic in (spec, count). Train and eval splits partition the prompt
/// space by a hash of the prompt text, so they never share a prompt.
std::vector<TaskItem> gen_task_items(const TaskSpec& spec, std::size_t count);
std::vector<Sample> gen_task(const TaskSpec& spec, std::size_t count);

/// Independent 64-bit seed for sub-stream `stream` of `seed` (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Evaluates "a+b*c" strictly left to right, every step reduced into [0, modulus).
long long eval_arith_left_to_right(std::string_view expr, int modulus);

/// Last maximal digit run in `text`, if any.
std::optional<long long> last_integer(std::string_view text);

// ---------------------------------------------------------------------------

/// Appends the argmax token (ties to the lowest id) until EOS or `max_new`
/// tokens; also stops when the sequence reaches max_seq_len. The returned
/// continuation excludes EOS.
std::vector<int> generate_greedy(const Weights& w, const ScaleSet& s, std::span<const int> prompt,
                                 std::size_t max_new);

/// Same decisions as generate_greedy for every prompt, decoded in one batch.
std::vector<std::vector<int>> generate_greedy_batch(const Weights& w, const ScaleSet& s,
                                                    const std::vector<std::vector<int>>& prompts,
                                                    std::size_t max_new);

/// Targets are the unmodified model's greedy generations (plus EOS).
std::vector<Sample> build_teacher_set(const Weights& w, const std::vector<std::string>& prompts);

// ---------------------------------------------------------------------------

/// One sample per row, right-padded with PAD. `tokens` are model inputs,
/// `targets` the next-token labels, `mask` marks scored positions.
struct PackedBatch {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::vector<int> tokens;
    std::vector<int> targets;
    std::vector<std::uint8_t> mask;
    std::vector<std::size_t> sample_index;  // position of each row in the input list

    TokenGrid grid() const { return TokenGrid{batch, seq, tokens}; }
    std::size_t scored() const;
    /// Weights making sum_t w_t * nll_t the mean over rows of each row's
    /// per-token mean NLL.
    std::vector<double> per_sample_weights() const;
};

struct PackOptions {
    std::size_t batch_size = 32;
    std::size_t max_len = 64;
    std::optional<std::uint64_t> shuffle_seed;  // none keeps input order
    bool truncate = false;  // drop the tail of over-long targets instead of failing
};

std::vector<PackedBatch> pack_batches(const std::vector<Sample>& samples, const PackOptions& options);

// ---------------------------------------------------------------------------
// Line-delimited {"prompt": ..., "response": ...} records.

void save_jsonl(const std::string& path, const std::vector<TaskItem>& items);
std::vector<TaskItem> load_jsonl(const std::string& path);
std::vector<TaskItem> to_items(const std::vector<Sample>& samples);
std::vector<Sample> to_samples(const std::vector<TaskItem>& items);

}  // namespace hopscotch
