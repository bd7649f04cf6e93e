#include "constalign/error.hpp"
#include "constalign/registry.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <random>

using namespace constalign;
using namespace constalign::registry;
using oracle::make_constitution;
using testsupport::json;

TEST_CASE("insert deduplicates by normalized text") {
  ConstitutionRegistry r;
  const std::vector<oracle::Constitution> first{make_constitution("Be kind.", 0, {"a"}, "t0"),
                                                make_constitution("be KIND", 0, {"b"}, "t0"),
                                                make_constitution("Never lie.", 0, {"a"}, "t0")};
  CHECK(r.insert(first) == 2);
  const std::vector<oracle::Constitution> second{make_constitution("Never  lie!", 1, {"c"}, "t1"),
                                                 make_constitution("Respect privacy.", 1, {"c"}, "t1")};
  CHECK(r.insert(second) == 1);
  REQUIRE(r.size() == 3);
  CHECK(r.entries()[0].source_record_ids == std::vector<std::string>{"a"});
  CHECK(r.entries()[2].iteration == 1);
  CHECK(r.contains(oracle::constitution_id("never lie")));
  REQUIRE(r.find(oracle::constitution_id("respect privacy")));
  CHECK(r.find("0000000000000000") == nullptr);
}

TEST_CASE("iterations may not go backwards") {
  ConstitutionRegistry r;
  const std::vector<oracle::Constitution> later{make_constitution("x", 3, {}, "")};
  const std::vector<oracle::Constitution> earlier{make_constitution("y", 2, {}, "")};
  r.insert(later);
  CHECK_THROWS_AS(r.insert(earlier), Error);
}

TEST_CASE("register_constitutions is functional") {
  ConstitutionRegistry empty;
  const std::vector<oracle::Constitution> cs{make_constitution("a rule", 0, {}, "")};
  const auto res = register_constitutions(empty, cs);
  CHECK(res.new_count == 1);
  CHECK(res.registry.size() == 1);
  CHECK(empty.size() == 0);
}

TEST_CASE("export/import round trip and tamper detection") {
  ConstitutionRegistry r;
  const std::vector<oracle::Constitution> cs{make_constitution("Be kind.", 0, {"a"}, "t"),
                                             make_constitution("Never lie.", 2, {"b", "c"}, "t2")};
  r.insert(cs);
  const auto j = export_registry(r);
  CHECK(j["version"] == 1);
  CHECK(import_registry(j) == r);

  auto tampered = j;
  tampered["constitutions"][0]["text"] = "Be cruel.";
  CHECK_THROWS_AS(import_registry(tampered), Error);
  auto dup = j;
  dup["constitutions"].push_back(j["constitutions"][0]);
  CHECK_THROWS_AS(import_registry(dup), Error);
  auto backwards = j;
  std::swap(backwards["constitutions"][0], backwards["constitutions"][1]);
  CHECK_THROWS_AS(import_registry(backwards), Error);
}

TEST_CASE("save, load and missing registry") {
  testsupport::TempDir d;
  ConstitutionRegistry r;
  const std::vector<oracle::Constitution> cs{make_constitution("Be kind.", 0, {"a"}, "t")};
  r.insert(cs);
  save_registry(r, d / "registry.json");
  CHECK(load_registry(d / "registry.json") == r);
  try {
    load_registry(d / "nope.json");
    FAIL("expected MissingRegistry");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingRegistry);
  }
  const auto text = format_registry(r);
  CHECK(text.find("Be kind.") != std::string::npos);
  CHECK(text.find(cs[0].id) != std::string::npos);
}

TEST_CASE("registry size never decreases under random insert sequences") {
  std::mt19937 rng(2);
  const std::vector<std::string> pool{"Be kind.", "Never lie.", "Avoid harm.", "Respect privacy.", "Cite sources.",
                                      "be kind", "AVOID HARM!"};
  for (int trial = 0; trial < 50; ++trial) {
    ConstitutionRegistry r;
    std::size_t last = 0;
    for (int it = 0; it < 10; ++it) {
      std::vector<oracle::Constitution> batch;
      for (std::size_t k = rng() % 4; k > 0; --k) batch.push_back(make_constitution(pool[rng() % pool.size()], it, {}, ""));
      const std::size_t added = r.insert(batch);
      CHECK(r.size() == last + added);
      CHECK(r.size() >= last);
      last = r.size();
    }
    CHECK(r.size() <= 5);
  }
}
