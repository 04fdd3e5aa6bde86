#include "mdlm/corpus.hpp"
#include "mdlm/errors.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>

namespace mdlm {
namespace {

std::string jsonl(const Corpus& c) {
    std::ostringstream out;
    write_corpus_jsonl(out, c);
    return out.str();
}

TEST(Corpus, SameSeedIsByteIdentical) {
    CorpusSpec s;
    s.seed = 4;
    EXPECT_EQ(jsonl(generate_corpus(s)), jsonl(generate_corpus(s)));
    CorpusSpec t = s;
    t.seed = 5;
    EXPECT_NE(jsonl(generate_corpus(s)), jsonl(generate_corpus(t)));
}

TEST(Corpus, ForgetTenPercentOfTwentyIsTwoEntities) {
    const Corpus c = generate_corpus(CorpusSpec{});
    std::set<std::size_t> forget;
    for (const auto& r : c.split(Split::kForget)) forget.insert(r.entity);
    EXPECT_EQ(forget, (std::set<std::size_t>{0, 1}));
    EXPECT_EQ(c.split(Split::kForget).size(), 10u);
    EXPECT_EQ(c.split(Split::kRetain).size(), 90u);
    EXPECT_EQ(c.split(Split::kWorld).size(), 30u);
}

class CorpusSeeds : public ::testing::TestWithParam<int> {};

TEST_P(CorpusSeeds, SplitsAreDisjointAndValuesDoNotLeak) {
    CorpusSpec s;
    s.seed = static_cast<std::uint64_t>(GetParam());
    const Corpus c = generate_corpus(s);
    std::set<std::size_t> forget_entities, retain_entities;
    std::set<std::pair<std::size_t, std::string>> keys;
    std::set<TokenId> forget_values, retain_tokens;
    for (const auto& r : c.records) {
        if (r.split == Split::kWorld) {
            EXPECT_EQ(r.entity, kNoEntity);
            continue;
        }
        EXPECT_TRUE(keys.insert({r.entity, r.attribute}).second) << "duplicate (entity, attribute)";
        if (r.split == Split::kForget) {
            forget_entities.insert(r.entity);
            forget_values.insert(r.value.begin(), r.value.end());
        } else {
            retain_entities.insert(r.entity);
            retain_tokens.insert(r.question.begin(), r.question.end());
            retain_tokens.insert(r.answer.begin(), r.answer.end());
        }
    }
    for (std::size_t e : forget_entities) EXPECT_FALSE(retain_entities.contains(e));
    for (TokenId t : forget_values) EXPECT_FALSE(retain_tokens.contains(t)) << c.vocab.word(t);
    for (const auto& r : c.records) {
        EXPECT_LE(r.question.size() + r.answer.size(), 64u);
        for (TokenId t : r.question) EXPECT_LT(t, c.vocab.size());
        for (TokenId t : r.answer) EXPECT_LT(t, c.vocab.size());
    }
    EXPECT_LE(c.vocab.size(), 128u);
}

INSTANTIATE_TEST_SUITE_P(FiftySeeds, CorpusSeeds, ::testing::Range(0, 50));

TEST(Corpus, TemplatesPutKindInPromptAndValueAtOffset) {
    const Corpus c = generate_corpus(CorpusSpec{});
    const auto& r = c.records.front();
    EXPECT_EQ(c.vocab.decode(r.question).substr(0, 8), "what is ");
    EXPECT_EQ(r.answer[0], r.question[2]);
    EXPECT_EQ(c.vocab.word(r.answer[1]), "was");
    EXPECT_EQ(TokenSequence(r.answer.begin() + 2, r.answer.end()), r.value);
}

TEST(Corpus, SpecErrors) {
    CorpusSpec s;
    s.vocab_limit = 50;
    EXPECT_THROW(generate_corpus(s), SpecError);
    s = {};
    s.forget_fraction = 1.0;
    EXPECT_THROW(generate_corpus(s), SpecError);
    s = {};
    s.num_entities = 200;
    EXPECT_THROW(generate_corpus(s), SpecError);
}

TEST(Dpo, PerturbsOnlyTheValue) {
    const Corpus c = generate_corpus(CorpusSpec{});
    const auto forget = c.split(Split::kForget);
    Rng rng(1);
    const auto triples = make_dpo_pairs(forget, rng);
    ASSERT_EQ(triples.size(), forget.size());
    for (std::size_t i = 0; i < triples.size(); ++i) {
        const auto& t = triples[i];
        EXPECT_NE(t.chosen, t.rejected);
        EXPECT_EQ(t.rejected, forget[i].answer);
        EXPECT_EQ(t.prompt, forget[i].question);
        ASSERT_EQ(t.chosen.size(), t.rejected.size());
        for (std::size_t p = 0; p < forget[i].value_offset; ++p) EXPECT_EQ(t.chosen[p], t.rejected[p]);
    }
}

TEST(Dpo, SubstituteIsUniformOverAlternatives) {
    const Corpus c = generate_corpus(CorpusSpec{});
    std::vector<FactRecord> donors;
    for (const auto& r : c.records) {
        if (r.attribute == "genre") donors.push_back(r);
    }
    const std::vector<FactRecord> target = {donors.front()};
    const std::size_t k = donors.size() - 1;
    std::map<TokenSequence, int> counts;
    Rng rng(2);
    const int draws = 1000;
    for (int i = 0; i < draws; ++i) ++counts[make_dpo_pairs(target, donors, rng)[0].chosen];
    EXPECT_EQ(counts.size(), k);
    const double expected = static_cast<double>(draws) / static_cast<double>(k);
    double chi2 = 0.0;
    for (const auto& [seq, n] : counts) chi2 += (n - expected) * (n - expected) / expected;
    // 18 degrees of freedom, p = 0.001.
    EXPECT_LT(chi2, 42.31);
}

TEST(Dpo, SingletonValuePoolIsRejected) {
    const Corpus c = generate_corpus(CorpusSpec{});
    const std::vector<FactRecord> one = {c.records.front()};
    Rng rng(0);
    EXPECT_THROW(make_dpo_pairs(one, rng), SpecError);
}

TEST(Io, JsonlRoundTrip) {
    const Corpus c = generate_corpus(CorpusSpec{});
    std::istringstream in(jsonl(c));
    const auto back = read_corpus_jsonl(in, c.vocab);
    ASSERT_EQ(back.size(), c.records.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        EXPECT_EQ(back[i].question, c.records[i].question);
        EXPECT_EQ(back[i].answer, c.records[i].answer);
        EXPECT_EQ(back[i].value, c.records[i].value);
        EXPECT_EQ(back[i].split, c.records[i].split);
        EXPECT_EQ(back[i].entity, c.records[i].entity);
    }
    std::istringstream bad("{\"split\":\"forget\"}\n");
    EXPECT_THROW(read_corpus_jsonl(bad, c.vocab), InputError);
}

TEST(Lexicon, LoadsKnownWordsAndSkipsComments) {
    const Corpus c = generate_corpus(CorpusSpec{});
    std::istringstream in("# comment\nwhat\nwas  # trailing\nnot_a_word\n");
    EXPECT_EQ(load_lexicon(in, c.vocab), (std::set<TokenId>{c.vocab.id("what"), c.vocab.id("was")}));
}

TEST(Vocabulary, EncodeDecode) {
    const Corpus c = generate_corpus(CorpusSpec{});
    EXPECT_EQ(c.vocab.decode(c.vocab.encode("what is sum of 3 4 ?")), "what is sum of 3 4 ?");
    EXPECT_EQ(c.vocab.id("<pad>"), Vocabulary::kPad);
    EXPECT_EQ(c.vocab.id("<mask>"), Vocabulary::kMask);
    EXPECT_THROW(c.vocab.encode("what zzz"), InputError);
}

}  // namespace
}  // namespace mdlm
