#include "dasc/synthlang.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dasc/rng.hpp"

namespace dasc {

namespace {

using nlohmann::json;

constexpr std::size_t kStyleLexiconSize = 20;
constexpr std::size_t kDefaultLexiconSize = 12;
constexpr std::size_t kFillerSize = 60;

const std::vector<std::string>& interrogative_words() {
    static const std::vector<std::string> words{
        "what", "how",   "why",  "when",  "where", "who",
        "which", "whose", "whom", "whats", "is_it", "do_you"};
    return words;
}

bool is_markerless_class(const std::string& name) {
    return name == "neutral" || name == "none" || name == "question" ||
           name == "non_question";
}

std::string numbered(const std::string& prefix, std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "_%02zu", i);
    return prefix + buf;
}

bool aspect_is_question(const AttributeSchema& schema, std::size_t aspect) {
    for (const auto& name : schema.aspects()[aspect].attributes) {
        if (name == "question") return true;
    }
    return false;
}

} // namespace

// ---------------------------------------------------------------------------
// Vocab
// ---------------------------------------------------------------------------

Vocab Vocab::build_default(const AttributeSchema& schema) {
    std::vector<Entry> entries;
    entries.push_back({"<pad>", "special"});
    entries.push_back({"<bos>", "special"});
    entries.push_back({"<eos>", "special"});
    entries.push_back({"<sep>", "special"});
    entries.push_back({"?", "special"});
    entries.push_back({".", "special"});

    for (std::size_t a = 0; a < schema.num_aspects(); ++a) {
        const Aspect& asp = schema.aspects()[a];
        const std::size_t lex =
            asp.name == "style" ? kStyleLexiconSize : kDefaultLexiconSize;
        for (const std::string& attr : asp.attributes) {
            if (is_markerless_class(attr)) continue;
            for (std::size_t i = 0; i < lex; ++i) {
                entries.push_back({numbered(attr, i), asp.name + ":" + attr});
            }
        }
    }
    for (std::size_t i = 0; i < kFillerSize; ++i) {
        entries.push_back({numbered("w", i), "filler"});
    }
    for (const std::string& w : interrogative_words()) {
        entries.push_back({w, "interrogative"});
    }
    for (std::size_t k = 0; k < schema.num_attributes(); ++k) {
        entries.push_back(
            {"<attr:" + schema.attribute_name(k) + ">", "control:" + schema.attribute_name(k)});
    }
    return from_entries(schema, std::move(entries));
}

Vocab Vocab::from_entries(const AttributeSchema& schema,
                          std::vector<Entry> entries) {
    static const char* expected_specials[] = {"<pad>", "<bos>", "<eos>",
                                              "<sep>", "?", "."};
    if (entries.size() < 6) throw DataError("vocab: missing reserved tokens");
    for (int i = 0; i < 6; ++i) {
        if (entries[static_cast<std::size_t>(i)].text != expected_specials[i]) {
            throw DataError("vocab: reserved token " + std::to_string(i) +
                            " must be '" + expected_specials[i] + "'");
        }
    }
    Vocab v;
    v.entries_ = std::move(entries);
    v.markers_.assign(schema.num_attributes(), {});
    v.control_codes_.assign(schema.num_attributes(), -1);
    for (std::size_t id = 0; id < v.entries_.size(); ++id) {
        const Entry& e = v.entries_[id];
        if (!v.by_text_.emplace(e.text, static_cast<int>(id)).second) {
            throw DataError("vocab: duplicate token '" + e.text + "'");
        }
        if (e.tag == "special") continue;
        if (e.tag == "filler") {
            v.filler_.push_back(static_cast<int>(id));
        } else if (e.tag == "interrogative") {
            v.interrogatives_.push_back(static_cast<int>(id));
        } else if (e.tag.rfind("control:", 0) == 0) {
            const std::string attr = e.tag.substr(8);
            v.control_codes_.at(schema.attribute_index(attr)) =
                static_cast<int>(id);
        } else {
            const auto colon = e.tag.find(':');
            if (colon == std::string::npos) {
                throw DataError("vocab: malformed tag '" + e.tag + "'");
            }
            const std::string attr = e.tag.substr(colon + 1);
            v.markers_.at(schema.attribute_index(attr)).push_back(static_cast<int>(id));
        }
    }
    for (std::size_t k = 0; k < schema.num_attributes(); ++k) {
        if (v.control_codes_[k] < 0) {
            throw DataError("vocab: missing control code for attribute '" +
                            schema.attribute_name(k) + "'");
        }
    }
    if (v.filler_.empty()) throw DataError("vocab: empty filler lexicon");
    if (v.interrogatives_.empty()) throw DataError("vocab: no interrogatives");
    return v;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= entries_.size()) {
        throw IndexError("vocab: token id " + std::to_string(id) + " out of range");
    }
    return entries_[static_cast<std::size_t>(id)].text;
}

const std::string& Vocab::tag(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= entries_.size()) {
        throw IndexError("vocab: token id " + std::to_string(id) + " out of range");
    }
    return entries_[static_cast<std::size_t>(id)].tag;
}

int Vocab::id_of(const std::string& token) const {
    auto it = by_text_.find(token);
    if (it == by_text_.end()) {
        throw DataError("vocab: unknown token '" + token + "'");
    }
    return it->second;
}

const std::vector<int>& Vocab::markers(std::size_t k) const {
    if (k >= markers_.size()) throw IndexError("vocab: attribute index out of range");
    return markers_[k];
}

int Vocab::control_code(std::size_t k) const {
    if (k >= control_codes_.size()) {
        throw IndexError("vocab: attribute index out of range");
    }
    return control_codes_[k];
}

bool Vocab::is_control_code(int id) const {
    return id >= 0 && static_cast<std::size_t>(id) < entries_.size() &&
           entries_[static_cast<std::size_t>(id)].tag.rfind("control:", 0) == 0;
}

std::string Vocab::detokenize(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
        if (!out.empty()) out += ' ';
        out += token(id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// corpus generation
// ---------------------------------------------------------------------------

std::vector<DialogueSample> generate_corpus(const CorpusConfig& cfg,
                                            const AttributeSchema& schema,
                                            const Vocab& vocab) {
    if (cfg.n_samples < 1) throw ConfigError("corpus: n_samples must be >= 1");
    if (cfg.len_min > cfg.len_max) {
        throw ConfigError("corpus: len_min exceeds len_max");
    }
    // 1 marker per non-default aspect + leading interrogative + punctuation
    // must fit in the shortest response.
    std::size_t marker_aspects = 0;
    for (std::size_t a = 0; a < schema.num_aspects(); ++a) {
        if (!aspect_is_question(schema, a)) ++marker_aspects;
    }
    const int needed = static_cast<int>(marker_aspects) + 2;
    if (cfg.len_min < needed) {
        throw ConfigError("corpus: len_min " + std::to_string(cfg.len_min) +
                          " cannot honor the marker rules (need >= " +
                          std::to_string(needed) + ")");
    }

    // context pool: filler + interrogatives
    std::vector<int> ctx_pool = vocab.filler();
    ctx_pool.insert(ctx_pool.end(), vocab.interrogatives().begin(),
                    vocab.interrogatives().end());

    std::vector<DialogueSample> out;
    out.reserve(cfg.n_samples);
    for (std::size_t s = 0; s < cfg.n_samples; ++s) {
        Rng rng(Rng::derive(cfg.seed, s));
        DialogueSample sample;
        sample.gold = AttributeAssignment::all_phi(schema);

        // Draw one class per aspect, uniform.
        std::vector<std::size_t> drawn(schema.num_aspects());
        for (std::size_t a = 0; a < schema.num_aspects(); ++a) {
            const auto [first, last] = schema.aspect_range(a);
            const std::size_t pick =
                first + rng.uniform_below(last - first);
            drawn[a] = pick;
            for (std::size_t k = first; k < last; ++k) {
                sample.gold.set(k, k == pick ? AttrValue::One : AttrValue::Zero);
            }
        }

        // Context: 1..5 pool tokens + SEP.
        const std::size_t ctx_len = static_cast<std::size_t>(rng.uniform_int(1, 5));
        for (std::size_t i = 0; i < ctx_len; ++i) {
            sample.context.push_back(
                ctx_pool[rng.uniform_below(ctx_pool.size())]);
        }
        sample.context.push_back(Vocab::kSep);

        // Response.
        const int len = static_cast<int>(
            rng.uniform_int(cfg.len_min, cfg.len_max));
        bool is_question = false;
        for (std::size_t a = 0; a < schema.num_aspects(); ++a) {
            if (aspect_is_question(schema, a)) {
                is_question = schema.attribute_name(drawn[a]) == "question";
            }
        }
        int avail = len - 1 - (is_question ? 1 : 0);

        // Aspects that must contribute markers, in schema order.
        std::vector<std::size_t> need_markers;
        for (std::size_t a = 0; a < schema.num_aspects(); ++a) {
            if (!aspect_is_question(schema, a) && !vocab.markers(drawn[a]).empty()) {
                need_markers.push_back(a);
            }
        }
        std::vector<int> body;
        for (std::size_t i = 0; i < need_markers.size(); ++i) {
            const std::size_t after = need_markers.size() - i - 1;
            const int cap = std::min(3, avail - static_cast<int>(after));
            const int n = static_cast<int>(rng.uniform_int(1, cap));
            avail -= n;
            const auto& lex = vocab.markers(drawn[need_markers[i]]);
            for (int j = 0; j < n; ++j) {
                body.push_back(lex[rng.uniform_below(lex.size())]);
            }
        }
        for (int i = 0; i < avail; ++i) {
            body.push_back(vocab.filler()[rng.uniform_below(vocab.filler().size())]);
        }
        rng.shuffle(body);

        if (is_question) {
            sample.response.push_back(
                vocab.interrogatives()[rng.uniform_below(vocab.interrogatives().size())]);
        }
        sample.response.insert(sample.response.end(), body.begin(), body.end());
        sample.response.push_back(is_question ? Vocab::kQmark : Vocab::kPeriod);

        out.push_back(std::move(sample));
    }
    return out;
}

std::vector<std::size_t> oracle_classify(std::span<const int> response,
                                         const AttributeSchema& schema,
                                         const Vocab& vocab) {
    std::vector<std::size_t> result(schema.num_aspects());
    for (std::size_t a = 0; a < schema.num_aspects(); ++a) {
        const auto [first, last] = schema.aspect_range(a);
        if (aspect_is_question(schema, a)) {
            bool has_qmark = false;
            for (int id : response) has_qmark = has_qmark || id == Vocab::kQmark;
            std::size_t q = first, nq = first;
            for (std::size_t k = first; k < last; ++k) {
                if (schema.attribute_name(k) == "question") q = k;
                else nq = k;
            }
            result[a] = has_qmark ? q : nq;
            continue;
        }
        std::size_t best = first;
        std::size_t best_count = 0;
        std::size_t fallback = first;  // first marker-less class, if any
        bool have_fallback = false;
        for (std::size_t k = first; k < last; ++k) {
            const auto& lex = vocab.markers(k);
            if (lex.empty()) {
                if (!have_fallback) {
                    fallback = k;
                    have_fallback = true;
                }
                continue;
            }
            std::size_t count = 0;
            for (int id : response) {
                count += std::binary_search(lex.begin(), lex.end(), id) ? 1 : 0;
            }
            if (count > best_count) {
                best = k;
                best_count = count;
            } else if (count == best_count && best_count > 0 && k < best) {
                best = k;
            }
        }
        result[a] = best_count == 0 && have_fallback ? fallback : best;
        if (best_count == 0 && !have_fallback) result[a] = first;
    }
    return result;
}

CorpusSplits split(const std::vector<DialogueSample>& samples,
                   const std::array<double, 3>& ratios, std::uint64_t seed) {
    const double total = ratios[0] + ratios[1] + ratios[2];
    if (std::fabs(total - 1.0) > 1e-9) {
        throw ConfigError("split: ratios must sum to 1");
    }
    const std::size_t n = samples.size();
    std::size_t c0 = static_cast<std::size_t>(std::floor(ratios[0] * n));
    std::size_t c1 = static_cast<std::size_t>(std::floor(ratios[1] * n));
    if (c0 + c1 > n) c1 = n - c0;
    const std::size_t c2 = n - c0 - c1;
    if (c0 == 0 || c1 == 0 || c2 == 0) {
        throw ConfigError("split: a split would be empty (n=" + std::to_string(n) + ")");
    }
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed);
    rng.shuffle(idx);
    CorpusSplits out;
    for (std::size_t i = 0; i < n; ++i) {
        const DialogueSample& s = samples[idx[i]];
        if (i < c0) out.train.push_back(s);
        else if (i < c0 + c1) out.dev.push_back(s);
        else out.test.push_back(s);
    }
    return out;
}

// ---------------------------------------------------------------------------
// I/O
// ---------------------------------------------------------------------------

namespace {

json assignment_to_json(const AttributeAssignment& a,
                        const AttributeSchema& schema) {
    json obj = json::object();
    for (std::size_t k = 0; k < schema.num_attributes(); ++k) {
        obj[schema.attribute_name(k)] = attr_value_str(a.value(k));
    }
    return obj;
}

AttributeAssignment assignment_from_json(const json& obj,
                                         const AttributeSchema& schema) {
    AttributeAssignment a(schema.num_attributes());
    for (const auto& [name, value] : obj.items()) {
        a.set(schema.attribute_index(name),
              attr_value_from_str(value.get<std::string>()));
    }
    return a;
}

json schema_to_json_obj(const AttributeSchema& schema) {
    json aspects = json::array();
    for (const Aspect& a : schema.aspects()) {
        aspects.push_back({{"name", a.name}, {"attributes", a.attributes}});
    }
    return json{{"aspects", aspects}};
}

std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + p.string());
    return f;
}

std::ifstream open_in(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw DataError("cannot open for reading: " + p.string());
    return f;
}

} // namespace

std::string schema_to_json(const AttributeSchema& schema) {
    return schema_to_json_obj(schema).dump(2);
}

AttributeSchema schema_from_json_text(const std::string& text) {
    json obj;
    try {
        obj = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("schema.json parse error: ") + e.what());
    }
    std::vector<Aspect> aspects;
    for (const auto& a : obj.at("aspects")) {
        Aspect asp;
        asp.name = a.at("name").get<std::string>();
        for (const auto& n : a.at("attributes")) {
            asp.attributes.push_back(n.get<std::string>());
        }
        aspects.push_back(std::move(asp));
    }
    return AttributeSchema::with_aspects(std::move(aspects));
}

void write_corpus_dir(const std::string& dir, const AttributeSchema& schema,
                      const Vocab& vocab,
                      const std::vector<DialogueSample>& samples,
                      const CorpusSplits& splits, const std::string& meta_json) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    {
        auto f = open_out(fs::path(dir) / "schema.json");
        f << schema_to_json(schema) << '\n';
    }
    {
        auto f = open_out(fs::path(dir) / "vocab.tsv");
        for (std::size_t id = 0; id < vocab.size(); ++id) {
            f << id << '\t' << vocab.token(static_cast<int>(id)) << '\t'
              << vocab.tag(static_cast<int>(id)) << '\n';
        }
    }
    {
        auto f = open_out(fs::path(dir) / "corpus.jsonl");
        for (const DialogueSample& s : samples) {
            json line{{"context", s.context},
                      {"response", s.response},
                      {"gold", assignment_to_json(s.gold, schema)}};
            f << line.dump() << '\n';
        }
    }
    {
        // Splits are stored as indices into corpus.jsonl. Sample identity is
        // (context, response, gold); duplicates resolve by first match.
        auto index_of = [&samples](const DialogueSample& s,
                                   std::vector<bool>& used) {
            for (std::size_t i = 0; i < samples.size(); ++i) {
                if (used[i]) continue;
                if (samples[i].context == s.context &&
                    samples[i].response == s.response &&
                    samples[i].gold == s.gold) {
                    used[i] = true;
                    return i;
                }
            }
            throw DataError("splits reference a sample not present in the corpus");
        };
        std::vector<bool> used(samples.size(), false);
        json obj = json::object();
        for (const auto* [name, part] :
             {std::pair<const char*, const std::vector<DialogueSample>*>{
                  "train", &splits.train},
              {"dev", &splits.dev},
              {"test", &splits.test}}) {
        }
        (void)index_of;
        // Построение ниже
        std::vector<std::size_t> tr, dv, te;
        for (const auto& s : splits.train) tr.push_back(index_of(s, used));
        for (const auto& s : splits.dev) dv.push_back(index_of(s, used));
        for (const auto& s : splits.test) te.push_back(index_of(s, used));
        obj["train"] = tr;
        obj["dev"] = dv;
        obj["test"] = te;
        auto f = open_out(fs::path(dir) / "splits.json");
        f << obj.dump() << '\n';
    }
    {
        auto f = open_out(fs::path(dir) / "meta.json");
        f << meta_json << '\n';
    }
}

LoadedCorpus load_corpus_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    LoadedCorpus out;

    {
        auto f = open_in(fs::path(dir) / "schema.json");
        std::string text((std::istreambuf_iterator<char>(f)),
                         std::istreambuf_iterator<char>());
        out.schema = schema_from_json_text(text);
    }
    {
        auto f = open_in(fs::path(dir) / "vocab.tsv");
        std::vector<Vocab::Entry> entries;
        std::string line;
        std::size_t expect = 0;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            const auto t1 = line.find('\t');
            const auto t2 = line.find('\t', t1 + 1);
            if (t1 == std::string::npos || t2 == std::string::npos) {
                throw DataError("vocab.tsv: malformed line: " + line);
            }
            const std::size_t id = std::stoul(line.substr(0, t1));
            if (id != expect) {
                throw DataError("vocab.tsv: ids must be dense and ordered");
            }
            ++expect;
            entries.push_back(
                {line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1)});
        }
        out.vocab = Vocab::from_entries(out.schema, std::move(entries));
    }
    {
        auto f = open_in(fs::path(dir) / "corpus.jsonl");
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            json obj;
            try {
                obj = json::parse(line);
            } catch (const json::exception& e) {
                throw DataError(std::string("corpus.jsonl parse error: ") + e.what());
            }
            DialogueSample s;
            s.context = obj.at("context").get<std::vector<int>>();
            s.response = obj.at("response").get<std::vector<int>>();
            s.gold = assignment_from_json(obj.at("gold"), out.schema);
            if (s.response.empty()) {
                throw DataError("corpus.jsonl: empty response");
            }
            out.samples.push_back(std::move(s));
        }
    }
    {
        auto f = open_in(fs::path(dir) / "splits.json");
        json obj;
        try {
            obj = json::parse(f);
        } catch (const json::exception& e) {
            throw DataError(std::string("splits.json parse error: ") + e.what());
        }
        auto fill = [&](const char* name, std::vector<DialogueSample>& dst) {
            for (std::size_t i : obj.at(name).get<std::vector<std::size_t>>()) {
                if (i >= out.samples.size()) {
                    throw DataError("splits.json: index out of range");
                }
                dst.push_back(out.samples[i]);
            }
        };
        fill("train", out.splits.train);
        fill("dev", out.splits.dev);
        fill("test", out.splits.test);
    }
    return out;
}

} // namespace dasc
