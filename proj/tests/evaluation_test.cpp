// Copyright 2026 The Counselflow Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "counselflow/evaluation.hpp"
#include "test_support.hpp"

namespace counselflow {
namespace {

using testing::count_occurrences;
using testing::kTemplateDir;
using testing::MockClient;
using testing::TempDir;

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kIOError;
}

const PromptTemplate& judge_template() {
  static const auto store = TemplateStore::load(kTemplateDir, Locale::kEn);
  return store.get(TemplateId::kJudge);
}

std::vector<Utterance> short_history() { return testing::alternating_history(3); }

// --- build_judge_request ------------------------------------------------------------

TEST(JudgeRequest, FixedLabelsInInputOrder) {
  const std::vector<ResponseCandidate> rs = {{"base", "reply one"}, {"staged", "reply two"}};
  const auto req = build_judge_request(judge_template(), short_history(), rs);
  ASSERT_EQ(req.label_map.size(), 2u);
  EXPECT_EQ(req.label_map[0], (LabelAssignment{"A", "base"}));
  EXPECT_EQ(req.label_map[1], (LabelAssignment{"B", "staged"}));
  EXPECT_NE(req.prompt.find("- Response A (base): reply one"), std::string::npos);
  EXPECT_NE(req.prompt.find("- Response B (staged): reply two"), std::string::npos);
}

TEST(JudgeRequest, FiveResponsesLabelledOnce) {
  std::vector<ResponseCandidate> rs;
  for (int i = 0; i < 5; ++i) rs.push_back({"m" + std::to_string(i), "r" + std::to_string(i)});
  const auto req = build_judge_request(judge_template(), short_history(), rs);
  for (char l = 'A'; l <= 'E'; ++l) {
    EXPECT_EQ(count_occurrences(req.prompt, std::string("- Response ") + l + " ("), 1u) << l;
    EXPECT_EQ(count_occurrences(req.prompt, std::string("[Response ") + l + " ("), 1u) << l;
  }
  EXPECT_EQ(count_occurrences(req.prompt, "- Response F"), 0u);
}

TEST(JudgeRequest, SeededShuffleIsReproducible) {
  std::vector<ResponseCandidate> rs;
  for (int i = 0; i < 4; ++i) rs.push_back({"m" + std::to_string(i), "r" + std::to_string(i)});
  const auto a = build_judge_request(judge_template(), short_history(), rs, 7);
  const auto b = build_judge_request(judge_template(), short_history(), rs, 7);
  EXPECT_EQ(a.label_map, b.label_map);
  EXPECT_EQ(a.prompt, b.prompt);
  std::set<std::string> tags;
  for (const auto& la : a.label_map) tags.insert(la.model_tag);
  EXPECT_EQ(tags.size(), 4u);
  bool any_differs = false;
  for (std::uint64_t seed = 0; seed < 20 && !any_differs; ++seed) {
    const auto c = build_judge_request(judge_template(), short_history(), rs, seed);
    for (std::size_t i = 0; i < 4; ++i) any_differs = any_differs || c.label_map[i].model_tag != rs[i].model_tag;
  }
  EXPECT_TRUE(any_differs);
}

TEST(JudgeRequest, TooFewResponses) {
  const std::vector<ResponseCandidate> one = {{"base", "r"}};
  EXPECT_EQ(code_of([&] { build_judge_request(judge_template(), short_history(), one); }), ErrorCode::kTooFewResponses);
}

// --- parse_judge_output -------------------------------------------------------------

TEST(JudgeParse, HandBuiltFixture) {
  const std::string text =
      "[Response A (Base Model)]\n"
      "Comprehensiveness: 4; Captures the loneliness.\n"
      "Professionalism: 3; Jumps to advice.\n"
      "Authenticity: 4; Warm tone.\n"
      "Safety: 5; Nothing harmful.\n"
      "\n"
      "[Response B (Staged Model)]\n"
      "Comprehensiveness: 5; Reflects background and feelings.\n"
      "Professionalism: 4; Good reflection.\n"
      "Authenticity: 5; Sincere.\n"
      "Safety: 5; Reassuring.\n";
  const std::vector<std::string> labels = {"A", "B"};
  const auto s = parse_judge_output(text, labels);
  ASSERT_EQ(s.size(), 2u);
  const double a[] = {4, 3, 4, 5}, b[] = {5, 4, 5, 5};
  for (auto d : kAllDimensions) {
    EXPECT_EQ(s[0].score(d), a[static_cast<int>(d)]);
    EXPECT_EQ(s[1].score(d), b[static_cast<int>(d)]);
  }
  EXPECT_EQ(s[0].reason(Dimension::kProfessionalism), "Jumps to advice.");
  EXPECT_EQ(s[1].response_label, "B");
}

TEST(JudgeParse, TwentySyntheticTranscripts) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> half_points(0, 10);
  for (int t = 0; t < 20; ++t) {
    const int n = 2 + t % 3;
    std::vector<std::pair<std::string, std::array<double, 4>>> blocks;
    std::vector<std::string> labels;
    for (int b = 0; b < n; ++b) {
      std::array<double, 4> s{};
      for (auto& v : s) v = half_points(rng) * 0.5;
      labels.push_back(std::string(1, static_cast<char>('A' + b)));
      blocks.emplace_back(labels.back(), s);
    }
    const auto text = testing::render_judge_transcript(blocks, t % 6, t % 2 == 1);
    const auto parsed = parse_judge_output(text, labels);
    ASSERT_EQ(parsed.size(), blocks.size()) << text;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      EXPECT_EQ(parsed[b].response_label, blocks[b].first);
      for (int d = 0; d < 4; ++d) {
        EXPECT_EQ(parsed[b].dims[d].score, blocks[b].second[d]) << "transcript " << t << "\n" << text;
        EXPECT_EQ(parsed[b].dims[d].reason, "reason " + blocks[b].first + std::to_string(d)) << text;
      }
    }
  }
}

TEST(JudgeParse, FormatterRoundTrip) {
  std::vector<JudgeScore> scores(2);
  for (int i = 0; i < 2; ++i) {
    scores[i].response_label = std::string(1, static_cast<char>('A' + i));
    scores[i].model_tag = "m" + std::to_string(i);
    for (int d = 0; d < 4; ++d) scores[i].dims[d] = {0.5 * (i + d + 3), "why " + std::to_string(d)};
  }
  const std::vector<std::string> labels = {"A", "B"};
  const auto back = parse_judge_output(format_judge_output(scores), labels);
  for (int i = 0; i < 2; ++i) EXPECT_EQ(back[i].dims, scores[i].dims);
}

TEST(JudgeParse, MalformedTranscripts) {
  const std::vector<std::string> ab = {"A", "B"};
  const std::string block_a = "[Response A]\nComprehensiveness: 4; r\nProfessionalism: 4; r\nAuthenticity: 4; r\nSafety: 4; r\n";
  EXPECT_EQ(code_of([&] { parse_judge_output(block_a, ab); }), ErrorCode::kMissingBlock);
  EXPECT_EQ(code_of([&] {
              parse_judge_output("[Response A]\nComprehensiveness: 4; r\nProfessionalism: 4; r\nSafety: 4; r\n",
                                 std::vector<std::string>{"A"});
            }),
            ErrorCode::kMissingDimension);
  // A dimension belonging to the next block does not count for this one.
  EXPECT_EQ(code_of([&] {
              parse_judge_output("[Response A]\nComprehensiveness: 4; r\n[Response B]\nProfessionalism: 4; r\n", ab);
            }),
            ErrorCode::kMissingDimension);
  for (const char* bad : {"6", "-1", "5.5"}) {
    const auto text = std::string("[Response A]\nComprehensiveness: ") + bad + "; r\nProfessionalism: 4; r\nAuthenticity: 4; r\nSafety: 4; r\n";
    EXPECT_EQ(code_of([&] { parse_judge_output(text, std::vector<std::string>{"A"}); }), ErrorCode::kScoreOutOfRange) << bad;
  }
  EXPECT_EQ(code_of([&] { parse_judge_output("x", std::vector<std::string>{}); }), ErrorCode::kInvalidRequest);
}

// --- judge_instance ----------------------------------------------------------------

TEST(JudgeInstance, TwoJudgesTwoResponses) {
  MockClient j1(mock::simulated_counselor()), j2(mock::simulated_counselor());
  const std::vector<JudgeSpec> judges = {{"judge-1", j1.client.get(), "gpt"}, {"judge-2", j2.client.get(), "claude"}};
  const std::vector<ResponseCandidate> rs = {{"base", "r1"}, {"staged", "r2"}};
  const auto card = judge_instance(judges, judge_template(), testing::make_instance("d", 3), rs);
  EXPECT_TRUE(card.complete());
  EXPECT_EQ(card.scores.size(), 4u);
  EXPECT_EQ(card.instance_id, "d#2");
  for (const auto* m : {&j1, &j2}) {
    ASSERT_EQ(m->calls(), 1u);
    const auto call = m->transport->calls()[0];
    EXPECT_EQ(call.body["temperature"].get<double>(), 0.0);
    EXPECT_EQ(call.request.purpose, "judge");
  }
  EXPECT_EQ(j2.transport->calls()[0].body["model"], "claude");
  for (const auto& s : card.scores) EXPECT_EQ(s.model_tag, s.response_label == "A" ? "base" : "staged");
}

TEST(JudgeInstance, MalformedJudgeMakesCardPartial) {
  MockClient good(mock::simulated_counselor()), bad(mock::fixed_reply("I refuse to score."));
  const std::vector<JudgeSpec> judges = {{"good", good.client.get(), "g"}, {"bad", bad.client.get(), "b"}};
  const std::vector<ResponseCandidate> rs = {{"base", "r1"}, {"staged", "r2"}};
  const auto card = judge_instance(judges, judge_template(), testing::make_instance("d", 1), rs);
  EXPECT_FALSE(card.complete());
  ASSERT_EQ(card.failures.size(), 1u);
  EXPECT_EQ(card.failures[0].judge_name, "bad");
  EXPECT_EQ(card.failures[0].code, ErrorCode::kMissingBlock);
  EXPECT_EQ(card.scores.size(), 2u);
  EXPECT_EQ(code_of([&] { judge_instance({}, judge_template(), testing::make_instance("d", 1), rs); }), ErrorCode::kConfigError);
}

TEST(JudgeInstance, CardJsonRoundTrip) {
  MockClient j(mock::simulated_counselor());
  const std::vector<JudgeSpec> judges = {{"j", j.client.get(), "m"}};
  const std::vector<ResponseCandidate> rs = {{"x", "r1"}, {"y", "r2"}};
  const auto card = judge_instance(judges, judge_template(), testing::make_instance("d", 1), rs);
  const auto back = card_from_json(json::parse(to_json(card).dump()));
  EXPECT_EQ(back.instance_id, card.instance_id);
  EXPECT_EQ(back.label_map, card.label_map);
  EXPECT_EQ(back.scores, card.scores);
  EXPECT_TRUE(back.complete());
}

// --- aggregate --------------------------------------------------------------------

ScoreCard uniform_card(const std::string& id, const std::vector<std::string>& models, const std::vector<std::string>& judges,
                       double value) {
  ScoreCard c;
  c.instance_id = id;
  c.judges = judges;
  for (std::size_t m = 0; m < models.size(); ++m) c.label_map.push_back({std::string(1, static_cast<char>('A' + m)), models[m]});
  for (const auto& j : judges) {
    for (const auto& la : c.label_map) {
      JudgeScore s;
      s.judge_name = j;
      s.response_label = la.label;
      s.model_tag = la.model_tag;
      for (auto& d : s.dims) d.score = value;
      c.scores.push_back(s);
    }
  }
  return c;
}

TEST(Aggregate, IdentityAndArithmetic) {
  auto card = uniform_card("i", {"m"}, {"j"}, 0);
  const double raw[] = {1, 2, 3.5, 5};
  for (int d = 0; d < 4; ++d) card.scores[0].dims[d].score = raw[d];
  const std::vector<ScoreCard> one = {card};
  const auto t = aggregate(one);
  ASSERT_EQ(t.rows.size(), 1u);
  for (int d = 0; d < 4; ++d) EXPECT_EQ(t.rows[0].means[d], raw[d]);
  EXPECT_DOUBLE_EQ(t.rows[0].avg, (1 + 2 + 3.5 + 5) / 4.0);

  auto two = uniform_card("i", {"m"}, {"j1", "j2"}, 3);
  for (auto& s : two.scores) {
    if (s.judge_name == "j2") {
      for (auto& d : s.dims) d.score = 4;
    }
  }
  const std::vector<ScoreCard> cards = {two};
  const auto t2 = aggregate(cards);
  for (double m : t2.rows[0].means) EXPECT_EQ(m, 3.5);
  EXPECT_EQ(t2.rows[0].avg, 3.5);
}

TEST(Aggregate, MatchesIndependentRecomputation) {
  std::mt19937_64 rng(50);
  std::uniform_int_distribution<int> pts(0, 10);
  const std::vector<std::string> models = {"base", "staged", "no-emo"};
  std::vector<ScoreCard> cards;
  std::map<std::string, std::array<std::vector<double>, 4>> by_model;
  for (int c = 0; c < 50; ++c) {
    auto card = uniform_card("i" + std::to_string(c), models, {"j1", "j2"}, 0);
    for (auto& s : card.scores) {
      for (int d = 0; d < 4; ++d) {
        s.dims[d].score = pts(rng) * 0.5;
        by_model[s.model_tag][d].push_back(s.dims[d].score);
      }
    }
    cards.push_back(std::move(card));
  }
  auto t = aggregate(cards);
  ASSERT_EQ(t.rows.size(), 3u);
  for (const auto& row : t.rows) {
    double sum_of_means = 0;
    for (int d = 0; d < 4; ++d) {
      const auto& v = by_model.at(row.model)[d];
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      EXPECT_NEAR(row.means[d], mean, 1e-9);
      sum_of_means += mean;
    }
    EXPECT_NEAR(row.avg, sum_of_means / 4, 1e-9);
  }
  // Permutation invariance.
  std::shuffle(cards.begin(), cards.end(), rng);
  for (auto& c : cards) std::reverse(c.scores.begin(), c.scores.end());
  const auto t2 = aggregate(cards);
  for (std::size_t r = 0; r < 3; ++r) {
    for (int d = 0; d < 4; ++d) EXPECT_NEAR(t2.rows[r].means[d], t.rows[r].means[d], 1e-12);
  }
}

TEST(Aggregate, CsvShapeAndPartialExclusion) {
  std::vector<ScoreCard> cards = {uniform_card("a", {"x", "y"}, {"j"}, 4), uniform_card("b", {"x", "y"}, {"j"}, 2)};
  cards[1].failures.push_back({"j2", ErrorCode::kMissingBlock, "bad"});
  const auto t = aggregate(cards);
  EXPECT_EQ(t.excluded_partial, 1u);
  EXPECT_EQ(t.complete_cards, 1u);
  const auto csv = to_csv(t);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "model,Comp,Prof,Auth,Safe,Avg");
  EXPECT_NE(csv.find("x,4.00,4.00,4.00,4.00,4.00"), std::string::npos) << csv;
  const auto j = to_json(t);
  EXPECT_EQ(j["columns"], json({"Comp", "Prof", "Auth", "Safe", "Avg"}));
  EXPECT_EQ(j["excluded_partial"], 1);

  std::vector<ScoreCard> partial_only = {cards[1]};
  EXPECT_EQ(code_of([&] { aggregate(partial_only); }), ErrorCode::kNoCompleteCards);
}

// --- sampling ---------------------------------------------------------------------

std::vector<Dialogue> merged_dialogues(std::size_t count, std::size_t turns) {
  std::vector<Dialogue> out;
  for (std::size_t k = 0; k < count; ++k) {
    Dialogue d;
    d.id = "dlg" + std::to_string(k);
    d.merged = true;
    for (std::size_t i = 0; i < 2 * turns; ++i) {
      d.utterances.push_back({i % 2 == 0 ? Speaker::kClient : Speaker::kCounselor, "t" + std::to_string(i), i});
    }
    out.push_back(std::move(d));
  }
  return out;
}

TEST(Sample, PaperSampleSizes) {
  const auto six = merged_dialogues(6, 25);
  const auto sixty = sample_eval_instances(six, 10, 1);
  EXPECT_EQ(sixty.size(), 60u);
  const auto ten = merged_dialogues(10, 12);
  EXPECT_EQ(sample_eval_instances(ten, 5, 1).size(), 50u);

  // 10 distinct instances per dialogue, grouped in dialogue order.
  for (std::size_t d = 0; d < 6; ++d) {
    std::set<std::string> ids;
    for (std::size_t i = 0; i < 10; ++i) {
      EXPECT_EQ(sixty[d * 10 + i].dialogue_id, "dlg" + std::to_string(d));
      ids.insert(sixty[d * 10 + i].id());
    }
    EXPECT_EQ(ids.size(), 10u);
  }
}

TEST(Sample, SeededAndBounded) {
  const auto ds = merged_dialogues(6, 25);
  EXPECT_EQ(sample_eval_instances(ds, 10, 9), sample_eval_instances(ds, 10, 9));
  EXPECT_NE(sample_eval_instances(ds, 10, 9), sample_eval_instances(ds, 10, 10));
  EXPECT_EQ(code_of([&] { sample_eval_instances(ds, 26, 1); }), ErrorCode::kInsufficientInstances);
  EXPECT_EQ(sample_eval_instances(ds, 25, 1).size(), 150u);
}

// --- pairwise -----------------------------------------------------------------------

std::vector<Instance> pair_instances(std::size_t n) {
  std::vector<Instance> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(testing::make_instance("p" + std::to_string(i), 1 + 2 * (i % 3)));
  return out;
}

OutputsByModel outputs_for(const std::vector<Instance>& instances, const std::vector<std::string>& models) {
  OutputsByModel out;
  for (std::size_t m = 0; m < models.size(); ++m) {
    for (const auto& inst : instances) out[models[m]][inst.id()] = "reply variant " + std::to_string(m) + " for " + inst.id();
  }
  return out;
}

TEST(Pairwise, CardinalityAndKeyResolution) {
  const auto instances = pair_instances(50);
  const std::vector<std::string> models = {"staged-qwen", "qwen-base"};
  const auto pack = build_pairwise_pack(instances, outputs_for(instances, models), models, 11);
  EXPECT_EQ(pack.items.size(), 50u);
  ASSERT_EQ(pack.key.size(), 50u);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < pack.items.size(); ++i) {
    EXPECT_EQ(pack.items[i].item_id, pack.key[i].item_id);
    ids.insert(pack.items[i].item_id);
    const auto& k = pack.key[i];
    EXPECT_NE(k.side1_model, k.side2_model);
    const auto outs = outputs_for(instances, models);
    EXPECT_EQ(pack.items[i].side1, outs.at(k.side1_model).at(k.instance_id));
    EXPECT_EQ(pack.items[i].side2, outs.at(k.side2_model).at(k.instance_id));
  }
  EXPECT_EQ(ids.size(), 50u);

  const std::vector<std::string> three = {"a-model", "b-model", "c-model"};
  EXPECT_EQ(build_pairwise_pack(instances, outputs_for(instances, three), three, 1).items.size(), 150u);
}

TEST(Pairwise, SideAssignmentIsBalancedAndPackIsAnonymous) {
  TempDir tmp;
  const auto instances = pair_instances(1000);
  const std::vector<std::string> models = {"staged-qwen", "qwen-base"};
  const auto pack = build_pairwise_pack(instances, outputs_for(instances, models), models, 2024);
  ASSERT_EQ(pack.items.size(), 1000u);
  std::size_t side1 = 0;
  for (const auto& k : pack.key) side1 += k.side1_model == "staged-qwen" ? 1 : 0;
  const double sigma = std::sqrt(1000 * 0.25);
  EXPECT_LE(std::abs(static_cast<double>(side1) - 500.0), 3 * sigma) << side1;

  std::ostringstream pack_text;
  for (const auto& item : pack.items) pack_text << to_json(item).dump() << '\n';
  for (const auto& m : models) EXPECT_EQ(pack_text.str().find(m), std::string::npos) << m;
  EXPECT_EQ(pack_text.str().find("instance_id"), std::string::npos);
}

TEST(Pairwise, MissingOutput) {
  const auto instances = pair_instances(3);
  const std::vector<std::string> models = {"a", "b"};
  auto outs = outputs_for(instances, models);
  outs["b"].erase(instances[1].id());
  EXPECT_EQ(code_of([&] { build_pairwise_pack(instances, outs, models, 1); }), ErrorCode::kMissingOutput);
}

TEST(Tally, RecoversGroundTruth) {
  const auto instances = pair_instances(300);
  const std::vector<std::string> models = {"alpha", "beta"};
  const auto pack = build_pairwise_pack(instances, outputs_for(instances, models), models, 77);
  // Ground truth per instance: alpha wins, beta wins, or tie.
  std::map<std::string, int> truth;
  std::size_t win = 0, lose = 0, tie = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    truth[instances[i].id()] = static_cast<int>((i * 7) % 3);
    (truth[instances[i].id()] == 0 ? win : truth[instances[i].id()] == 1 ? lose : tie)++;
  }
  Judgments j;
  for (const auto& k : pack.key) {
    const int t = truth.at(k.instance_id);
    if (t == 2) {
      j[k.item_id] = Verdict::kTie;
    } else {
      const std::string winner = t == 0 ? "alpha" : "beta";
      j[k.item_id] = k.side1_model == winner ? Verdict::kSide1 : Verdict::kSide2;
    }
  }
  const auto tally = tally_pairwise(j, pack.key);
  ASSERT_EQ(tally.size(), 1u);
  const auto& t = tally.begin()->second;
  EXPECT_EQ(t.model_a, "alpha");
  EXPECT_EQ(t.win, win);
  EXPECT_EQ(t.lose, lose);
  EXPECT_EQ(t.tie, tie);
  EXPECT_NEAR(t.win_rate + t.lose_rate + t.tie_rate, 1.0, 1e-12);
}

std::vector<PairKeyEntry> hand_key() {
  // Items 1-6 compare x/y in varying side order; 7-10 compare x/z.
  return {{"i1", "", "x", "y"}, {"i2", "", "y", "x"}, {"i3", "", "x", "y"}, {"i4", "", "y", "x"}, {"i5", "", "x", "y"},
          {"i6", "", "y", "x"}, {"i7", "", "z", "x"}, {"i8", "", "x", "z"}, {"i9", "", "z", "x"}, {"i10", "", "x", "z"}};
}

TEST(Tally, HandCountedFixture) {
  const Judgments j = {{"i1", Verdict::kSide1}, {"i2", Verdict::kSide1}, {"i3", Verdict::kTie},
                       {"i4", Verdict::kSide2}, {"i5", Verdict::kSide2}, {"i6", Verdict::kTie},
                       {"i7", Verdict::kSide1}, {"i8", Verdict::kSide1}, {"i9", Verdict::kSide2},
                       {"i10", Verdict::kTie}};
  const auto key = hand_key();
  const auto t = tally_pairwise(j, key);
  // x vs y: i1 x wins, i2 y wins, i3 tie, i4 x wins, i5 y wins, i6 tie.
  const auto& xy = t.at({"x", "y"});
  EXPECT_EQ(xy.win, 2u);
  EXPECT_EQ(xy.lose, 2u);
  EXPECT_EQ(xy.tie, 2u);
  // x vs z: i7 z wins, i8 x wins, i9 x wins, i10 tie.
  const auto& xz = t.at({"x", "z"});
  EXPECT_EQ(xz.win, 2u);
  EXPECT_EQ(xz.lose, 1u);
  EXPECT_EQ(xz.tie, 1u);
  EXPECT_DOUBLE_EQ(xz.win_rate, 0.5);
}

TEST(Tally, AllTiesAndUnknownItem) {
  const auto key = hand_key();
  Judgments ties;
  for (const auto& k : key) ties[k.item_id] = Verdict::kTie;
  for (const auto& [_, t] : tally_pairwise(ties, key)) EXPECT_EQ(t.tie_rate, 1.0);
  const Judgments unknown = {{"nope", Verdict::kTie}};
  EXPECT_EQ(code_of([&] { tally_pairwise(unknown, key); }), ErrorCode::kUnknownItem);
}

TEST(Tally, EvaluatorAveragingAndPooling) {
  const auto key = hand_key();
  std::vector<Judgments> evaluators(3);
  // Evaluator k judges the first 2+2k x/y items, always for side1.
  for (int k = 0; k < 3; ++k) {
    for (int i = 1; i <= 2 + 2 * k; ++i) evaluators[k]["i" + std::to_string(i)] = Verdict::kSide1;
  }
  std::vector<double> rates;
  for (const auto& e : evaluators) rates.push_back(tally_pairwise(e, key).at({"x", "y"}).win_rate);
  const auto mean = tally_evaluators(evaluators, key).at({"x", "y"});
  EXPECT_NEAR(mean.win_rate, (rates[0] + rates[1] + rates[2]) / 3, 1e-12);
  const auto pooled = tally_evaluators(evaluators, key, TallyMode::kPooled).at({"x", "y"});
  EXPECT_EQ(pooled.judged(), 2u + 4u + 6u);
  EXPECT_NEAR(pooled.win_rate, static_cast<double>(pooled.win) / 12.0, 1e-12);
  EXPECT_NEAR(mean.win_rate + mean.lose_rate + mean.tie_rate, 1.0, 1e-12);
}

TEST(Tally, JudgmentFileParsing) {
  TempDir tmp;
  std::ofstream(tmp / "j.jsonl") << R"({"item_id":"i1","verdict":"side1"})" << "\n" << R"({"item_id":"i2","verdict":"tie"})" << "\n";
  const auto j = load_judgments(tmp / "j.jsonl");
  EXPECT_EQ(j.at("i1"), Verdict::kSide1);
  std::ofstream(tmp / "bad.jsonl") << R"({"item_id":"i1","verdict":"left"})" << "\n";
  EXPECT_EQ(code_of([&] { load_judgments(tmp / "bad.jsonl"); }), ErrorCode::kSchemaError);
}

}  // namespace
}  // namespace counselflow
