#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <string>

#include "anubis/scored_io.hpp"
#include "anubis/tokenizer.hpp"

using namespace anubis;

namespace {

const std::string kGolden = std::string(ANUBIS_TEST_DATA) + "/scorer_golden.jsonl";

std::string read_error(const std::string& text) {
  try {
    read_scored_string(text);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

ScoredSample sample(std::string id, std::string text) {
  ScoredSample s;
  s.id = std::move(id);
  s.text = std::move(text);
  return s;
}

}  // namespace

TEST(ScoredIo, GoldenFileParses) {
  const auto f = read_scored(kGolden);
  EXPECT_TRUE(f.warnings.empty());
  ASSERT_TRUE(f.header);
  EXPECT_EQ((*f.header)["format"], "anubis-scored");
  EXPECT_EQ((*f.header)["scoring"]["adversary"]["depth"], 2);
  ASSERT_EQ(f.samples.size(), 6u);

  double target = 0.0, adversary = 0.0;
  int missing = 0, impossible = 0;
  for (const auto& s : f.samples) {
    ASSERT_EQ(s.logprob.size(), 2u);
    const auto& t = s.logprob.at("target");
    if (!t) ++missing;
    else if (*t == kNegInf) ++impossible;
    else target += *t;
    adversary += *s.logprob.at("adversary");
  }
  EXPECT_EQ(missing, 1);
  EXPECT_EQ(impossible, 1);
  EXPECT_NEAR(target, -13.120732273553991, 1e-12);
  EXPECT_NEAR(adversary, -15.245732273553991, 1e-12);

  EXPECT_EQ(f.samples[2].tokens, (TokenSeq{5, 2}));
  EXPECT_EQ(f.samples[3].extra["truncated"], false);
  EXPECT_FALSE(f.samples[4].provenance);
  EXPECT_FALSE(f.samples[5].provenance);
  EXPECT_EQ(f.samples[5].text, "a\tb");
  EXPECT_EQ(f.samples[5].extra["note"]["source"], "hand");
}

TEST(ScoredIo, GoldenTokensDecodeUnderToyTokenizer) {
  const auto spec = TokenizerSpec::load(std::string(ANUBIS_TOY_DIR) + "/toy.tok");
  const auto f = read_scored(kGolden);
  EXPECT_EQ(token_mismatches(f.samples, spec), (std::vector<std::string>{"g5"}));
}

TEST(ScoredIo, RoundTrip) {
  std::vector<ScoredSample> in;
  auto a = sample("a", "x\"y\\z\n");
  a.tokens = {1, 2, 3};
  a.logprob["m1"] = -1.25;
  a.logprob["m2"] = std::nullopt;
  a.logprob["m3"] = kNegInf;
  a.provenance = "target";
  a.extra["truncated"] = true;
  a.extra["meta"] = {{"k", 1}};
  in.push_back(a);
  in.push_back(sample("b", ""));
  auto c = sample("c", "\xce\xbb");
  c.logprob["m1"] = -1e-300;
  in.push_back(c);

  nlohmann::json header = {{"format", "anubis-scored"}, {"version", 1}};
  std::stringstream buf;
  write_scored(buf, in, header);
  const auto f = read_scored(buf);
  EXPECT_EQ(f.samples, in);
  EXPECT_EQ(*f.header, header);

  std::stringstream no_header;
  write_scored(no_header, in);
  EXPECT_FALSE(read_scored(no_header).header);
}

TEST(ScoredIo, FieldOrderAndEncoding) {
  auto s = sample("z", "t");
  s.logprob["m"] = kNegInf;
  s.logprob["n"] = std::nullopt;
  EXPECT_EQ(to_json_line(s),
            R"({"id":"z","text":"t","tokens":[],"logprob":{"m":"-inf","n":null},"provenance":null})");
}

TEST(ScoredIo, EmptyInput) {
  const auto f = read_scored_string("");
  EXPECT_TRUE(f.samples.empty());
  EXPECT_FALSE(f.header);
  EXPECT_TRUE(read_scored_string("\n  \n").samples.empty());
}

TEST(ScoredIo, PositiveLogprobWarns) {
  const auto f = read_scored_string(R"({"id":"a","text":"","logprob":{"m":0.5}})");
  ASSERT_EQ(f.warnings.size(), 1u);
  EXPECT_NE(f.warnings[0].find("line 1"), std::string::npos);
  EXPECT_EQ(*f.samples[0].logprob.at("m"), 0.5);
}

TEST(ScoredIo, MalformedLinesReportLineNumbers) {
  const std::string ok = R"({"id":"a","text":"x"})";
  EXPECT_NE(read_error(ok + "\n\n{not json\n").find("line 3"), std::string::npos);
  EXPECT_NE(read_error(ok + "\n[1,2]\n").find("line 2"), std::string::npos);
  EXPECT_NE(read_error(R"({"text":"x"})").find("line 1"), std::string::npos);
  EXPECT_NE(read_error(R"({"id":"a","text":1})").find("text"), std::string::npos);
  EXPECT_NE(read_error(R"({"id":"a","text":"x","tokens":[1.5]})").find("tokens"), std::string::npos);
  EXPECT_NE(read_error(R"({"id":"a","text":"x","logprob":{"m":"nan"}})").find("logprob"), std::string::npos);
  EXPECT_NE(read_error(R"({"id":"a","text":"x","logprob":[1]})").find("logprob"), std::string::npos);
  EXPECT_NE(read_error(R"({"id":"a","text":"x","provenance":3})").find("provenance"), std::string::npos);
  EXPECT_NE(read_error(ok + "\n" + R"({"anubis_header":{}})").find("first line"), std::string::npos);
  try {
    read_scored_string("{");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "scored-format");
  }
}

TEST(ScoredIo, DuplicateIds) {
  try {
    read_scored_string("{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "duplicate-id");
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(ScoredIo, MissingFile) {
  EXPECT_THROW(read_scored(std::string("/nonexistent/scored.jsonl")), Error);
}
