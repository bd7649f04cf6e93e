#include "constalign/error.hpp"
#include "constalign/reflection.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

using namespace constalign;
using namespace constalign::reflection;
using testsupport::json;

namespace {

const json kAppendScript{
    {"rules",
     {{{"slot", "base"}, {"match", "comply: (explode)"}, {"error", "unreachable"}},
      {{"slot", "base"}, {"match", "comply: (.*)$"}, {"response", "{{last_assistant}}|{{1}}"}}}}};

redteam::AttackResult attack(const std::string& id) {
  redteam::AttackResult a;
  a.record_id = id;
  a.prompt.record_id = id;
  a.prompt.question = "q-" + id;
  a.prompt.messages = {gateway::user_message("q-" + id)};
  a.response.text = "orig";
  return a;
}

std::vector<oracle::Constitution> constitutions(std::size_t n) {
  std::vector<oracle::Constitution> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(oracle::make_constitution("c" + std::to_string(i), 0, {}, ""));
  return out;
}

}  // namespace

TEST_CASE("steps thread the response and follow the seeded order") {
  auto base = testsupport::mock_client(kAppendScript, gateway::Slot::Base);
  const auto p = testsupport::prompts();
  const auto cs = constitutions(5);
  const auto t = self_reflect(*base, p, attack("r1"), cs, 99, {}, 2);
  REQUIRE(t.steps.size() == 5);
  CHECK(t.iteration == 2);
  CHECK(t.order_seed == 99);
  CHECK(t.question == "q-r1");
  CHECK(t.verified == VerifyStatus::Skipped);
  CHECK(t.steps.front().response_before == "orig");
  std::string expected = "orig";
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    if (i > 0) CHECK(t.steps[i].response_before == t.steps[i - 1].response_after);
    CHECK(t.steps[i].constitution_id == t.constitution_order[i]);
    const auto* c = &*std::find_if(cs.begin(), cs.end(), [&](const auto& x) { return x.id == t.constitution_order[i]; });
    CHECK(t.steps[i].prompt_sent == render_reflection_instruction(p, c->text));
    expected += "|" + c->text;
    CHECK(t.steps[i].changed);
  }
  CHECK(t.final_response == expected);
}

TEST_CASE("order is a reproducible permutation that varies with the seed") {
  auto base = testsupport::mock_client(kAppendScript, gateway::Slot::Base);
  const auto p = testsupport::prompts();
  const auto cs = constitutions(6);
  std::set<std::vector<std::string>> orders;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto a = self_reflect(*base, p, attack("r"), cs, seed, {});
    CHECK(a == self_reflect(*base, p, attack("r"), cs, seed, {}));
    auto sorted = a.constitution_order;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::string> ids;
    for (const auto& c : cs) ids.push_back(c.id);
    std::sort(ids.begin(), ids.end());
    CHECK(sorted == ids);
    orders.insert(a.constitution_order);
  }
  CHECK(orders.size() > 10);
}

TEST_CASE("order seed mixes run seed and record id") {
  CHECK(derive_order_seed(1, "a") == derive_order_seed(1, "a"));
  CHECK(derive_order_seed(1, "a") != derive_order_seed(1, "b"));
  CHECK(derive_order_seed(1, "a") != derive_order_seed(2, "a"));
}

TEST_CASE("unchanged responses are flagged and empty sets are a no-op") {
  const json echo{{"rules", {{{"slot", "base"}, {"response", "{{last_assistant}}"}}}}};
  auto base = testsupport::mock_client(echo, gateway::Slot::Base);
  const auto t = self_reflect(*base, testsupport::prompts(), attack("r"), constitutions(2), 1, {});
  CHECK(std::none_of(t.steps.begin(), t.steps.end(), [](const auto& s) { return s.changed; }));
  const auto none = self_reflect(*base, testsupport::prompts(), attack("r"), {}, 1, {});
  CHECK(none.steps.empty());
  CHECK(none.final_response == "orig");
}

TEST_CASE("a failing step aborts with the partial trace") {
  auto base = testsupport::mock_client(kAppendScript, gateway::Slot::Base);
  auto cs = constitutions(3);
  cs.push_back(oracle::make_constitution("explode", 0, {}, ""));
  try {
    self_reflect(*base, testsupport::prompts(), attack("r"), cs, 5, {});
    FAIL("expected ReflectionAborted");
  } catch (const ReflectionAborted& e) {
    CHECK(e.code() == ErrorCode::ReflectionAborted);
    const auto& partial = e.partial();
    CHECK(partial.steps.size() < 4);
    CHECK(partial.constitution_order[partial.steps.size()] == cs.back().id);
  }
}

TEST_CASE("verify_revision uses the oracle evaluation prompt") {
  const json script{{"rules", {{{"slot", "oracle"}, {"match", "HARM"}, {"response", "Negative"}},
                               {{"slot", "oracle"}, {"response", "Positive"}}}}};
  auto o = testsupport::mock_client(script, gateway::Slot::Oracle);
  const auto a = attack("r");
  CHECK(verify_revision(*o, testsupport::prompts(), a.prompt, "safe", {}).label == oracle::Label::Positive);
  CHECK(verify_revision(*o, testsupport::prompts(), a.prompt, "HARM", {}).label == oracle::Label::Negative);
}

TEST_CASE("trace JSON round trip") {
  auto base = testsupport::mock_client(kAppendScript, gateway::Slot::Base);
  const auto t = self_reflect(*base, testsupport::prompts(), attack("r"), constitutions(3), 4, {});
  CHECK(json(t).get<RevisionTrace>() == t);
}
