#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "embed2text/common.hpp"
#include "embed2text/decode.hpp"
#include "support/tiny_stack.hpp"

using namespace embed2text;

TEST_CASE("greedy generation is deterministic") {
  auto& st = testutil::untrained_stack();
  DecodeConfig cfg;
  cfg.kind = DecodeConfig::Kind::kGreedy;
  const auto a = base_generate(*st.base, *st.tokenizer, st.dataset[0].target_embedding,
                               st.phi_empty, cfg, nullptr);
  const auto b = base_generate(*st.base, *st.tokenizer, st.dataset[0].target_embedding,
                               st.phi_empty, cfg, nullptr);
  REQUIRE(a.size() == 1);
  CHECK(a[0].ids == b[0].ids);
}

TEST_CASE("beam rerank puts the max-cosine candidate first") {
  auto& st = testutil::tiny_stack();
  DecodeConfig cfg;
  cfg.kind = DecodeConfig::Kind::kBeam;
  cfg.beam_width = 8;
  cfg.num_return = 8;
  cfg.rerank = true;
  QueryLedger ledger(st.embedder);
  const auto out = base_generate(*st.base, *st.tokenizer, st.dataset[1].target_embedding,
                                 st.phi_empty, cfg, &ledger);
  REQUIRE(out.size() >= 2);
  std::vector<double> cos;
  for (const auto& seq : out) {
    cos.push_back(cosine_similarity(ledger.embed(seq.text), st.dataset[1].target_embedding));
  }
  for (size_t i = 0; i < cos.size(); ++i) CHECK(cos[0] >= cos[i]);
  CHECK(std::is_sorted(cos.rbegin(), cos.rend()));
}

TEST_CASE("nucleus sampling is seed-deterministic and validates p") {
  auto& st = testutil::untrained_stack();
  DecodeConfig cfg;
  cfg.kind = DecodeConfig::Kind::kNucleus;
  cfg.top_p = 0.9;
  cfg.num_return = 4;
  cfg.seed = 123;
  const auto a = base_generate(*st.base, *st.tokenizer, st.dataset[0].target_embedding,
                               st.phi_empty, cfg, nullptr);
  const auto b = base_generate(*st.base, *st.tokenizer, st.dataset[0].target_embedding,
                               st.phi_empty, cfg, nullptr);
  REQUIRE(a.size() == 4);
  for (size_t i = 0; i < 4; ++i) CHECK(a[i].ids == b[i].ids);

  cfg.top_p = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.top_p = 0.9;
  cfg.num_return = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  DecodeConfig beam_cfg;
  beam_cfg.kind = DecodeConfig::Kind::kBeam;
  beam_cfg.beam_width = 0;
  CHECK_THROWS_AS(beam_cfg.validate(), ConfigError);
}

TEST_CASE("beam decode returns distinct ranked candidates") {
  auto& st = testutil::tiny_stack();
  DecodeConfig cfg;
  cfg.kind = DecodeConfig::Kind::kBeam;
  cfg.beam_width = 6;
  cfg.num_return = 6;
  const auto out = base_generate(*st.base, *st.tokenizer, st.dataset[2].target_embedding,
                                 st.phi_empty, cfg, nullptr);
  REQUIRE(out.size() >= 2);
  std::set<std::vector<int>> unique;
  for (const auto& seq : out) unique.insert(seq.ids);
  CHECK(unique.size() == out.size());
}
