#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dasc/schema.hpp"

namespace dasc {

// Token inventory of the synthetic language. Marker lexicons are pairwise
// disjoint; the "neutral"/"none" classes deliberately own no lexicon and are
// recognizable only as the absence of markers.
class Vocab {
public:
    // Reserved ids, fixed forever.
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kSep = 3;
    static constexpr int kQmark = 4;
    static constexpr int kPeriod = 5;

    struct Entry {
        std::string text;
        std::string tag;  // "special" | "style:alpha" | "emotion:like" |
                          // "filler" | "interrogative" | "control:<attr>"
    };

    static Vocab build_default(const AttributeSchema& schema);
    static Vocab from_entries(const AttributeSchema& schema,
                              std::vector<Entry> entries);

    std::size_t size() const { return entries_.size(); }
    const std::string& token(int id) const;
    const std::string& tag(int id) const;
    int id_of(const std::string& token) const;  // DataError when unknown
    const std::vector<Entry>& entries() const { return entries_; }

    // Marker lexicon of attribute k; empty for classes without markers.
    const std::vector<int>& markers(std::size_t k) const;
    const std::vector<int>& filler() const { return filler_; }
    const std::vector<int>& interrogatives() const { return interrogatives_; }
    // Control-code token "<attr:NAME>" for attribute k.
    int control_code(std::size_t k) const;
    bool is_control_code(int id) const;

    std::string detokenize(std::span<const int> ids) const;

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, int> by_text_;
    std::vector<std::vector<int>> markers_;  // per attribute
    std::vector<int> filler_;
    std::vector<int> interrogatives_;
    std::vector<int> control_codes_;  // per attribute
};

struct DialogueSample {
    std::vector<int> context;   // ends with SEP
    std::vector<int> response;  // non-empty
    AttributeAssignment gold;
};

struct CorpusConfig {
    std::size_t n_samples = 1000;
    std::uint64_t seed = 0;
    int len_min = 4;   // response length range, inclusive
    int len_max = 12;
};

// Deterministic under seed (each sample derives its own stream, so sharded
// generation gives identical output). Responses are built to satisfy
// oracle_classify exactly: for every non-default class 1..3 markers of the
// drawn class and none of its siblings; question responses open with an
// interrogative and close with '?', others close with '.'. Gold labels set
// the drawn attribute to One and its aspect siblings to Zero.
std::vector<DialogueSample> generate_corpus(const CorpusConfig& cfg,
                                            const AttributeSchema& schema,
                                            const Vocab& vocab);

// Rule-based exact labeler: per aspect the class with most markers (ties ->
// first in schema order), the marker-less class when none occur; an aspect
// containing "question" is decided by the presence of '?' anywhere.
// Returns one global attribute index per aspect.
std::vector<std::size_t> oracle_classify(std::span<const int> response,
                                         const AttributeSchema& schema,
                                         const Vocab& vocab);

struct CorpusSplits {
    std::vector<DialogueSample> train, dev, test;
};

struct SplitIndices {
    std::vector<std::size_t> train, dev, test;
};

// Deterministic shuffle + partition; ratios must sum to 1 and every split
// must be non-empty.
SplitIndices split_indices(std::size_t n, const std::array<double, 3>& ratios,
                           std::uint64_t seed);
CorpusSplits split(const std::vector<DialogueSample>& samples,
                   const std::array<double, 3>& ratios, std::uint64_t seed);

// --- corpus directory I/O ---------------------------------------------------
// corpus.jsonl  one {"context":[...],"response":[...],"gold":{name:"1|0|phi"}}
//               object per line
// vocab.tsv     id <TAB> token <TAB> tag
// schema.json   {"aspects":[{"name":...,"attributes":[...]}]}
// splits.json   {"train":[indices],"dev":[...],"test":[...]}

std::string schema_to_json(const AttributeSchema& schema);
AttributeSchema schema_from_json_text(const std::string& text);

void write_corpus_dir(const std::string& dir, const AttributeSchema& schema,
                      const Vocab& vocab,
                      const std::vector<DialogueSample>& samples,
                      const SplitIndices& splits, const std::string& meta_json);

struct LoadedCorpus {
    AttributeSchema schema;
    Vocab vocab;
    std::vector<DialogueSample> samples;
    CorpusSplits splits;
};

LoadedCorpus load_corpus_dir(const std::string& dir);

} // namespace dasc
