#include "mdlm/corpus.hpp"

#include "mdlm/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace mdlm {

Vocabulary::Vocabulary() {
    add("<pad>");
    add("<mask>");
}

TokenId Vocabulary::add(std::string_view word) {
    if (auto it = ids_.find(word); it != ids_.end()) {
        return it->second;
    }
    const auto id = static_cast<TokenId>(words_.size());
    words_.emplace_back(word);
    ids_.emplace(std::string(word), id);
    return id;
}

TokenId Vocabulary::id(std::string_view word) const {
    auto it = ids_.find(word);
    if (it == ids_.end()) {
        throw InputError("unknown word '" + std::string(word) + "'");
    }
    return it->second;
}

const std::string& Vocabulary::word(TokenId id) const {
    if (id >= words_.size()) {
        throw InputError("token id " + std::to_string(id) + " outside the vocabulary");
    }
    return words_[id];
}

TokenSequence Vocabulary::encode(std::string_view text) const {
    TokenSequence out;
    std::istringstream in{std::string(text)};
    std::string w;
    while (in >> w) {
        out.push_back(id(w));
    }
    return out;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += word(ids[i]);
    }
    return out;
}

std::string_view to_string(Split s) {
    switch (s) {
        case Split::kForget: return "forget";
        case Split::kRetain: return "retain";
        case Split::kWorld: return "world";
    }
    return "?";
}

Split parse_split(std::string_view name) {
    for (Split s : {Split::kForget, Split::kRetain, Split::kWorld}) {
        if (to_string(s) == name) return s;
    }
    throw ConfigError("unknown split '" + std::string(name) + "'");
}

const std::vector<std::string>& attribute_kinds() {
    static const std::vector<std::string> kinds = {"birth-date", "birthplace", "occupation", "work-title", "genre"};
    return kinds;
}

namespace {

const std::vector<std::string> kFirstNames = {"ada", "bo",  "cy",  "di",  "ed",  "fay",
                                              "gus", "hal", "ivy", "jo",  "kit", "lu"};
const std::vector<std::string> kLastNames = {"kay", "lin", "moe", "nox", "orr", "pim",
                                             "quo", "rey", "sol", "tam", "ubu", "vex"};
const std::vector<std::string> kValuePrefix = {"date", "place", "job", "title", "genre"};
const std::vector<std::string> kTemplateWords = {"what", "is", "of", "?", "was", "sum"};

std::string pool_word(std::size_t kind, bool forget, std::size_t i) {
    return kValuePrefix[kind] + (forget ? "_f" : "_r") + std::to_string(i);
}

std::string digit(std::size_t d) { return std::to_string(d); }

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[static_cast<std::size_t>(rng.below(i))]);
    }
}

}  // namespace

void CorpusSpec::validate() const {
    auto fail = [](const std::string& what) { throw SpecError("corpus spec: " + what); };
    if (num_entities == 0) fail("num_entities must be >= 1");
    if (!(forget_fraction > 0.0 && forget_fraction < 1.0)) fail("forget_fraction must lie in (0, 1)");
    if (attributes_per_entity == 0 || attributes_per_entity > attribute_kinds().size()) {
        fail("attributes_per_entity must lie in [1, " + std::to_string(attribute_kinds().size()) + "]");
    }
    if (value_length == 0) fail("value_length must be >= 1");
    if (forget_pool_size < value_length || retain_pool_size < value_length) {
        fail("value pools must hold at least value_length tokens");
    }
    if (num_first_names > kFirstNames.size() || num_last_names > kLastNames.size()) {
        fail("at most " + std::to_string(kFirstNames.size()) + " first and last names are available");
    }
    if (num_entities > num_first_names * num_last_names) fail("not enough distinct names for every entity");
    if (world_facts > 100) fail("at most 100 distinct world facts exist");
    if (num_forget_entities() >= num_entities) fail("forget split leaves no retain entity");
}

std::size_t CorpusSpec::num_forget_entities() const {
    return static_cast<std::size_t>(std::ceil(forget_fraction * static_cast<double>(num_entities) - 1e-9));
}

std::vector<FactRecord> Corpus::split(Split s) const {
    std::vector<FactRecord> out;
    std::copy_if(records.begin(), records.end(), std::back_inserter(out),
                 [s](const FactRecord& r) { return r.split == s; });
    return out;
}

std::vector<QAPair> Corpus::pairs(Split s) const {
    std::vector<QAPair> out;
    for (const auto& r : records) {
        if (r.split == s) out.push_back(r.pair());
    }
    return out;
}

std::vector<QAPair> Corpus::all_pairs() const {
    std::vector<QAPair> out;
    for (const auto& r : records) out.push_back(r.pair());
    return out;
}

std::size_t Corpus::max_sequence_length() const {
    std::size_t m = 0;
    for (const auto& r : records) m = std::max(m, r.question.size() + r.answer.size());
    return m;
}

Vocabulary build_vocabulary(const CorpusSpec& spec) {
    spec.validate();
    Vocabulary v;
    for (const auto& w : kTemplateWords) v.add(w);
    for (std::size_t k = 0; k < spec.attributes_per_entity; ++k) v.add(attribute_kinds()[k]);
    for (std::size_t i = 0; i < spec.num_first_names; ++i) v.add(kFirstNames[i]);
    for (std::size_t i = 0; i < spec.num_last_names; ++i) v.add(kLastNames[i]);
    for (std::size_t d = 0; d < 10; ++d) v.add(digit(d));
    for (std::size_t k = 0; k < spec.attributes_per_entity; ++k) {
        for (std::size_t i = 0; i < spec.forget_pool_size; ++i) v.add(pool_word(k, true, i));
        for (std::size_t i = 0; i < spec.retain_pool_size; ++i) v.add(pool_word(k, false, i));
    }
    if (v.size() > spec.vocab_limit) {
        throw SpecError("corpus vocabulary needs " + std::to_string(v.size()) + " ids but the limit is " +
                        std::to_string(spec.vocab_limit));
    }
    return v;
}

Corpus generate_corpus(const CorpusSpec& spec) {
    Corpus c{spec, build_vocabulary(spec), {}};
    const Vocabulary& v = c.vocab;
    Rng rng(spec.seed);

    std::vector<std::pair<std::size_t, std::size_t>> names;
    for (std::size_t f = 0; f < spec.num_first_names; ++f) {
        for (std::size_t l = 0; l < spec.num_last_names; ++l) names.emplace_back(f, l);
    }
    shuffle(names, rng);
    names.resize(spec.num_entities);

    const std::size_t n_forget = spec.num_forget_entities();
    const TokenId what = v.id("what"), is = v.id("is"), of = v.id("of"), q = v.id("?"), was = v.id("was");

    for (std::size_t k = 0; k < spec.attributes_per_entity; ++k) {
        std::set<TokenSequence> used;
        for (std::size_t e = 0; e < spec.num_entities; ++e) {
            const bool forget = e < n_forget;
            const std::size_t pool = forget ? spec.forget_pool_size : spec.retain_pool_size;
            std::vector<TokenId> tokens;
            for (std::size_t i = 0; i < pool; ++i) tokens.push_back(v.id(pool_word(k, forget, i)));
            TokenSequence value;
            for (int attempt = 0;; ++attempt) {
                if (attempt == 1000) {
                    throw SpecError("value pool for '" + attribute_kinds()[k] + "' too small for distinct values");
                }
                shuffle(tokens, rng);
                value.assign(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(spec.value_length));
                if (used.insert(value).second) break;
            }
            FactRecord r;
            r.entity = e;
            r.attribute = attribute_kinds()[k];
            r.value = value;
            r.value_offset = 2;
            const TokenId kind = v.id(r.attribute);
            r.question = {what, is, kind, of, v.id(kFirstNames[names[e].first]), v.id(kLastNames[names[e].second]), q};
            r.answer = {kind, was};
            r.answer.insert(r.answer.end(), value.begin(), value.end());
            r.split = forget ? Split::kForget : Split::kRetain;
            c.records.push_back(std::move(r));
        }
    }
    std::stable_sort(c.records.begin(), c.records.end(),
                     [](const FactRecord& a, const FactRecord& b) { return a.entity < b.entity; });

    std::vector<std::pair<std::size_t, std::size_t>> sums;
    for (std::size_t a = 0; a < 10; ++a) {
        for (std::size_t b = 0; b < 10; ++b) sums.emplace_back(a, b);
    }
    shuffle(sums, rng);
    const TokenId sum = v.id("sum");
    for (std::size_t i = 0; i < spec.world_facts; ++i) {
        const auto [a, b] = sums[i];
        FactRecord r;
        r.attribute = "sum";
        r.value = {v.id(digit((a + b) / 10)), v.id(digit((a + b) % 10))};
        r.value_offset = 2;
        r.question = {what, is, sum, of, v.id(digit(a)), v.id(digit(b)), q};
        r.answer = {sum, was, r.value[0], r.value[1]};
        r.split = Split::kWorld;
        c.records.push_back(std::move(r));
    }
    return c;
}

std::vector<DpoTriple> make_dpo_pairs(std::span<const FactRecord> records, std::span<const FactRecord> donors,
                                      Rng& rng) {
    std::map<std::string, std::set<TokenSequence>> values;
    for (const auto& d : donors) values[d.attribute].insert(d.value);
    std::vector<DpoTriple> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        std::vector<TokenSequence> alternatives;
        for (const auto& val : values[r.attribute]) {
            if (val != r.value && val.size() == r.value.size()) alternatives.push_back(val);
        }
        if (alternatives.empty()) {
            throw SpecError("no alternative value of kind '" + r.attribute + "' for a perturbed response");
        }
        const TokenSequence& pick = alternatives[static_cast<std::size_t>(rng.below(alternatives.size()))];
        TokenSequence chosen = r.answer;
        std::copy(pick.begin(), pick.end(), chosen.begin() + static_cast<std::ptrdiff_t>(r.value_offset));
        out.push_back({r.question, std::move(chosen), r.answer});
    }
    return out;
}

std::vector<DpoTriple> make_dpo_pairs(std::span<const FactRecord> records, Rng& rng) {
    return make_dpo_pairs(records, records, rng);
}

std::set<TokenId> load_lexicon(std::istream& in, const Vocabulary& vocab) {
    std::set<TokenId> out;
    std::string line;
    while (std::getline(in, line)) {
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream words(line);
        std::string w;
        while (words >> w) {
            if (vocab.contains(w)) out.insert(vocab.id(w));
        }
    }
    return out;
}

std::set<TokenId> load_lexicon(const std::filesystem::path& path, const Vocabulary& vocab) {
    std::ifstream in(path);
    if (!in) {
        throw DependencyError("cannot open lexicon file " + path.string());
    }
    return load_lexicon(in, vocab);
}

void write_corpus_jsonl(std::ostream& out, const Corpus& corpus) {
    for (const auto& r : corpus.records) {
        nlohmann::json j = {{"split", to_string(r.split)},
                            {"entity", r.entity == kNoEntity ? nlohmann::json(nullptr) : nlohmann::json(r.entity)},
                            {"attribute", r.attribute},
                            {"question_ids", r.question},
                            {"answer_ids", r.answer},
                            {"question_text", corpus.vocab.decode(r.question)},
                            {"answer_text", corpus.vocab.decode(r.answer)}};
        out << j.dump() << '\n';
    }
}

std::vector<FactRecord> read_corpus_jsonl(std::istream& in, const Vocabulary& vocab) {
    std::vector<FactRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            FactRecord r;
            r.split = parse_split(j.at("split").get<std::string>());
            r.entity = j.at("entity").is_null() ? kNoEntity : j.at("entity").get<std::size_t>();
            r.attribute = j.at("attribute").get<std::string>();
            r.question = j.at("question_ids").get<TokenSequence>();
            r.answer = j.at("answer_ids").get<TokenSequence>();
            if (vocab.decode(r.question) != j.at("question_text").get<std::string>() ||
                vocab.decode(r.answer) != j.at("answer_text").get<std::string>()) {
                throw InputError("ids and text disagree");
            }
            if (r.answer.size() < 3) throw InputError("answer shorter than the template");
            r.value_offset = 2;
            r.value.assign(r.answer.begin() + 2, r.answer.end());
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw InputError("corpus line " + std::to_string(lineno) + ": " + e.what());
        } catch (const InputError& e) {
            throw InputError("corpus line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace mdlm
