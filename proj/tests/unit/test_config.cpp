#include "cabb/config.hpp"
#include "cabb/errors.hpp"

#include <doctest.h>

#include <sstream>

using namespace cabb;
using namespace cabb::config;

TEST_CASE("format and parse round trip") {
  RunConfig c;
  c.shift.rotation_deg = 12.5;
  c.shift.dim = 3;
  c.shift.translation = {0.1, -0.2, 1e-17};
  c.adapt.alpha = 1.0 / 3.0;
  c.adapt.use_noisy_loss = false;
  c.adapt.hidden = {16, 8, 4};
  c.seeds = {0, 1, 2};
  c.output_dir = "runs/a b";
  std::istringstream in(format(c));
  const auto back = parse(in);
  CHECK(back == c);
  CHECK(format(back) == format(c));
  CHECK(back.adapt.alpha == c.adapt.alpha);
  CHECK(back.shift.translation == c.shift.translation);
}

TEST_CASE("defaults are explicit for every key") {
  const RunConfig c;
  for (const auto& [k, v] : entries(c)) {
    CHECK_FALSE(k.empty());
    if (k == "shift.translation" || k.ends_with("_file") || k == "output_dir") continue;
    CHECK_FALSE(v.empty());
  }
  std::istringstream empty("");
  CHECK(parse(empty) == c);
}

TEST_CASE("comments, blanks and whitespace are tolerated") {
  std::istringstream in("# comment\n\n  adapt.epochs =  7 \nadapt.use_curriculum=false\nseeds = 3, 4\n");
  const auto c = parse(in);
  CHECK(c.adapt.epochs == 7);
  CHECK_FALSE(c.adapt.use_curriculum);
  CHECK(c.seeds == std::vector<std::uint64_t>{3, 4});
}

TEST_CASE("unknown keys and bad values are rejected") {
  std::istringstream unknown("adapt.epochs = 3\nadapt.lambda = 1\n");
  try {
    parse(unknown);
    FAIL("expected UnknownKeyError");
  } catch (const UnknownKeyError& e) {
    CHECK(e.key() == "adapt.lambda");
  }
  std::istringstream bad("adapt.epochs = many\n");
  CHECK_THROWS_AS(parse(bad), ValidationError);
  std::istringstream no_eq("adapt.epochs 3\n");
  CHECK_THROWS_AS(parse(no_eq), ParseError);
  RunConfig c;
  c.seeds.clear();
  CHECK_THROWS_AS(c.validate(), ValidationError);
}
