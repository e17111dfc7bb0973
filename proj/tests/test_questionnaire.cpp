#include <doctest.h>

#include "test_util.hpp"
#include "visionsim/error.hpp"
#include "visionsim/experiment.hpp"
#include "visionsim/fs_util.hpp"
#include "visionsim/questionnaire.hpp"

using namespace visionsim;
using namespace visionsim::questionnaire;
using testutil::TempDir;
namespace fs = std::filesystem;

namespace {

Questionnaire mixed() {
  Questionnaire q;
  q.abbreviation = "MIX";
  q.title = "Mixed items";
  q.items = {{"comfort", "How comfortable?", Likert{1, 5, {"low", "high"}}, true},
             {"lens", "Which lens felt best?", Choice{{"autofocal", "progressive", "none"}}, true},
             {"notes", "Anything else?", FreeText{}, false},
             {"clarity", "Rate the clarity", Slider{0.0, 10.0, 0.5}, true}};
  return q;
}

std::vector<std::string> details_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    return e.details();
  }
  return {"<no error>"};
}

}  // namespace

TEST_SUITE("questionnaire") {

TEST_CASE("bundled TLX loads") {
  const auto q = load_questionnaire("TLX", testutil::data_dir() / "questionnaires");
  CHECK(q.abbreviation == "TLX");
  REQUIRE(q.items.size() == 6);
  CHECK(q.items[0].id == "mental");
  CHECK(std::get<Likert>(q.items[0].kind).max == 7);
  CHECK(q.find("frustration") != nullptr);
  CHECK(q.find("boredom") == nullptr);
}

TEST_CASE("missing questionnaire names the expected path") {
  TempDir dir;
  try {
    load_questionnaire("XYZ", dir.path());
    FAIL("expected not found");
  } catch (const NotFoundError& e) {
    CHECK(e.path() == (dir.path() / "XYZ.json").string());
    CHECK(std::string(e.what()).find("XYZ.json") != std::string::npos);
  }
  CHECK_THROWS_AS(load_questionnaire("../etc", dir.path()), ValidationError);
}

TEST_CASE("schema violations name the item") {
  auto bad = to_json(mixed());
  bad["items"][0]["min"] = 5;
  bad["items"][0]["max"] = 1;
  CHECK(details_of([&] { parse_questionnaire(bad); }) == std::vector<std::string>{"comfort"});

  bad = to_json(mixed());
  bad["items"][1]["options"] = {"only"};
  CHECK(details_of([&] { parse_questionnaire(bad); }) == std::vector<std::string>{"lens"});

  bad = to_json(mixed());
  bad["items"][3]["step"] = 0;
  CHECK(details_of([&] { parse_questionnaire(bad); }) == std::vector<std::string>{"clarity"});

  bad = to_json(mixed());
  bad["items"][2]["id"] = "comfort";
  CHECK(details_of([&] { parse_questionnaire(bad); }) == std::vector<std::string>{"comfort"});

  bad = to_json(mixed());
  bad["items"][2]["kind"] = "drawing";
  CHECK(details_of([&] { parse_questionnaire(bad); }) == std::vector<std::string>{"notes"});

  bad = to_json(mixed());
  bad["items"] = nlohmann::json::array();
  CHECK_THROWS_AS(parse_questionnaire(bad), ValidationError);

  TempDir dir;
  write_json_file(dir / "BAD.json", nlohmann::json::parse(R"({"abbreviation": "BAD", "items": [
    {"id": "q1", "kind": "likert", "min": 5, "max": 1}]})"));
  CHECK(details_of([&] { load_questionnaire("BAD", dir.path()); }) == std::vector<std::string>{"q1"});
}

TEST_CASE("save then load is the identity") {
  TempDir dir;
  const auto q = mixed();
  const auto path = save_questionnaire(q, dir.path());
  CHECK(path == dir / "MIX.json");
  CHECK(load_questionnaire("MIX", dir.path()) == q);
  const auto tlx = load_questionnaire("TLX", testutil::data_dir() / "questionnaires");
  save_questionnaire(tlx, dir.path());
  CHECK(load_questionnaire("TLX", dir.path()) == tlx);
}

TEST_CASE("answer type checks") {
  const auto q = mixed();
  const Item& likert = q.items[0];
  CHECK_NOTHROW(check_answer(likert, 3));
  CHECK_THROWS_AS(check_answer(likert, 9), ValidationError);
  CHECK_THROWS_AS(check_answer(likert, 0), ValidationError);
  CHECK_THROWS_AS(check_answer(likert, 2.5), ValidationError);
  CHECK_THROWS_AS(check_answer(likert, "3"), ValidationError);
  CHECK_NOTHROW(check_answer(q.items[1], "none"));
  CHECK_THROWS_AS(check_answer(q.items[1], "bifocal"), ValidationError);
  CHECK_NOTHROW(check_answer(q.items[2], "fine"));
  CHECK_THROWS_AS(check_answer(q.items[2], 4), ValidationError);
  CHECK_NOTHROW(check_answer(q.items[3], 7.5));
  CHECK_THROWS_AS(check_answer(q.items[3], 7.25), ValidationError);
  CHECK_THROWS_AS(check_answer(q.items[3], 10.5), ValidationError);
}

TEST_CASE("tlx likert 9 is rejected") {
  const auto tlx = load_questionnaire("TLX", testutil::data_dir() / "questionnaires");
  auto r = default_responses(tlx, "questionnaire");
  r.answers["mental"] = 9;
  CHECK(details_of([&] { validate_responses(tlx, r); }) == std::vector<std::string>{"mental"});
}

TEST_CASE("unanswered required items are listed") {
  const auto q = mixed();
  ResponseSet r;
  r.abbreviation = "MIX";
  r.scene_name = "quest";
  r.answers["lens"] = "none";
  CHECK(details_of([&] { validate_responses(q, r); }) ==
        std::vector<std::string>{"comfort", "clarity"});
  r.answers["comfort"] = 2;
  r.answers["clarity"] = 0.5;
  CHECK_NOTHROW(validate_responses(q, r));
  r.answers["extra"] = 1;
  CHECK(details_of([&] { validate_responses(q, r); }) == std::vector<std::string>{"extra"});
}

TEST_CASE("default responses are valid") {
  const auto q = mixed();
  const auto r = default_responses(q, "quest");
  CHECK_NOTHROW(validate_responses(q, r));
  CHECK(r.answers.at("comfort") == 3);
  CHECK(r.answers.at("lens") == "autofocal");
  CHECK(r.answers.at("clarity") == 5.0);
}

TEST_CASE("record responses") {
  TempDir root;
  const auto session = experiment::create_session("S01", {}, root.path());
  const auto tlx = load_questionnaire("TLX", testutil::data_dir() / "questionnaires");
  const auto r = default_responses(tlx, "questionnaire_1");
  const auto first = record_responses(tlx, r, session);
  const auto second = record_responses(tlx, r, session);
  const auto third = record_responses(tlx, r, session);
  CHECK(first == session.session_dir / "questionnaire_1" / "responses_TLX.json");
  CHECK(second == session.session_dir / "questionnaire_1" / "responses_TLX_1.json");
  CHECK(third == session.session_dir / "questionnaire_1" / "responses_TLX_2.json");

  const auto back = parse_response_set(read_json_file(first));
  CHECK(back.abbreviation == "TLX");
  CHECK(back.scene_name == "questionnaire_1");
  CHECK(back.answers == r.answers);
  CHECK_FALSE(back.completed_at.empty());
  CHECK_NOTHROW(validate_responses(tlx, back));

  auto incomplete = r;
  incomplete.answers.erase("effort");
  CHECK(details_of([&] { record_responses(tlx, incomplete, session); }) ==
        std::vector<std::string>{"effort"});
  CHECK_FALSE(fs::exists(session.session_dir / "questionnaire_1" / "responses_TLX_3.json"));
}

}  // TEST_SUITE
