#pragma once

#include "mdlm/denoiser.hpp"
#include "mdlm/rng.hpp"

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace mdlm {

inline constexpr std::size_t kNoEntity = static_cast<std::size_t>(-1);

// Word <-> id table. Ids 0 and 1 are always <pad> and <mask>.
class Vocabulary {
public:
    static constexpr TokenId kPad = 0;
    static constexpr TokenId kMask = 1;

    Vocabulary();

    TokenId add(std::string_view word);
    // Throws InputError for an unknown word / id.
    TokenId id(std::string_view word) const;
    const std::string& word(TokenId id) const;
    bool contains(std::string_view word) const { return ids_.contains(std::string(word)); }
    std::size_t size() const { return words_.size(); }

    TokenSequence encode(std::string_view text) const;
    std::string decode(std::span<const TokenId> ids) const;

private:
    std::vector<std::string> words_;
    std::map<std::string, TokenId, std::less<>> ids_;
};

enum class Split { kForget, kRetain, kWorld };

std::string_view to_string(Split s);
Split parse_split(std::string_view name);

// Attribute kinds in template order.
const std::vector<std::string>& attribute_kinds();

struct FactRecord {
    std::size_t entity = kNoEntity;
    std::string attribute;
    TokenSequence value;
    // Index of the first value token in `answer`.
    std::size_t value_offset = 0;
    TokenSequence question;
    TokenSequence answer;
    Split split = Split::kRetain;

    QAPair pair() const { return {question, answer}; }
};

struct CorpusSpec {
    std::size_t num_entities = 20;
    std::size_t attributes_per_entity = 5;
    double forget_fraction = 0.1;
    // Tokens per attribute value.
    std::size_t value_length = 3;
    // Per attribute kind: value tokens reserved for forget / retain entities.
    std::size_t forget_pool_size = 5;
    std::size_t retain_pool_size = 8;
    std::size_t num_first_names = 6;
    std::size_t num_last_names = 6;
    std::size_t world_facts = 30;
    std::size_t vocab_limit = 128;
    std::uint64_t seed = 0;

    // Throws SpecError.
    void validate() const;
    std::size_t num_forget_entities() const;
};

struct Corpus {
    CorpusSpec spec;
    Vocabulary vocab;
    std::vector<FactRecord> records;

    std::vector<FactRecord> split(Split s) const;
    std::vector<QAPair> pairs(Split s) const;
    std::vector<QAPair> all_pairs() const;
    std::size_t max_sequence_length() const;
};

// Vocabulary fixed by the spec alone (names, value pools, template words, digits).
Vocabulary build_vocabulary(const CorpusSpec& spec);

// Question: what is <kind> of <first> <last> ?   Answer: <kind> was <v1 .. vk>
// World facts: what is sum of <a> <b> ?          Answer: sum was <tens> <ones>
// The forget split holds every record of the first ceil(forget_fraction * N)
// entities; forget values use tokens no retain record contains.
Corpus generate_corpus(const CorpusSpec& spec);

struct DpoTriple {
    TokenSequence prompt;
    TokenSequence chosen;
    TokenSequence rejected;
};

// rejected = original answer; chosen = same template with the value replaced
// by a different value of the same attribute kind, uniform over the distinct
// alternatives found in `donors`. Throws SpecError if a kind has no alternative.
std::vector<DpoTriple> make_dpo_pairs(std::span<const FactRecord> records, std::span<const FactRecord> donors,
                                      Rng& rng);
std::vector<DpoTriple> make_dpo_pairs(std::span<const FactRecord> records, Rng& rng);

// Reads a lexicon file (one word per line, '#' comments) into ids; unknown
// words are ignored.
std::set<TokenId> load_lexicon(std::istream& in, const Vocabulary& vocab);
std::set<TokenId> load_lexicon(const std::filesystem::path& path, const Vocabulary& vocab);

// {"split","entity","attribute","question_ids","answer_ids","question_text","answer_text"} per line.
void write_corpus_jsonl(std::ostream& out, const Corpus& corpus);
// Records are re-validated against `vocab`; value fields are recovered from
// the answer template.
std::vector<FactRecord> read_corpus_jsonl(std::istream& in, const Vocabulary& vocab);

}  // namespace mdlm
