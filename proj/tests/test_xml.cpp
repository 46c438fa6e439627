#include <catch2/catch_amalgamated.hpp>

#include "skrefine/xml.hpp"

using namespace skrefine;

TEST_CASE("parses nested elements and attributes") {
  auto root = xml_parse(R"(<?xml version="1.0"?>
<system tick_rate="10000" ncpus="2">
  <subject name="sub1" cpu="0">
    <memory logical="binary" size="0x1000"/>
  </subject>
</system>)");
  CHECK(root.name == "system");
  CHECK(root.require_attr("tick_rate") == "10000");
  CHECK(root.require_attr("ncpus") == "2");
  REQUIRE(root.children.size() == 1);
  const XmlNode& sub = root.children[0];
  CHECK(sub.name == "subject");
  CHECK(sub.line == 3);
  REQUIRE(sub.child("memory") != nullptr);
  CHECK(sub.child("memory")->require_attr("size") == "0x1000");
}

TEST_CASE("comments and whitespace are skipped") {
  auto root = xml_parse("<a><!-- note --><b x='1'/><!-- tail --></a>");
  REQUIRE(root.children.size() == 1);
  CHECK(root.children[0].require_attr("x") == "1");
}

TEST_CASE("entities decode in attribute values") {
  auto root = xml_parse(R"(<a v="&lt;&amp;&gt;&quot;&apos;"/>)");
  CHECK(root.require_attr("v") == "<&>\"'");
}

TEST_CASE("escape and parse round-trip") {
  std::string raw = "a<b&c>\"d'";
  auto root = xml_parse("<a v=\"" + xml_escape(raw) + "\"/>");
  CHECK(root.require_attr("v") == raw);
}

TEST_CASE("malformed documents raise ParseError with a line") {
  try {
    xml_parse("<a>\n  <b>\n</a>");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line == 3);
  }
  CHECK_THROWS_AS(xml_parse("<a x=1/>"), ParseError);
  CHECK_THROWS_AS(xml_parse("<a><b/></a><c/>"), ParseError);
  CHECK_THROWS_AS(xml_parse("no xml here"), ParseError);
  CHECK_THROWS_AS(xml_parse("<a x='1' x='2'/>"), ParseError);
  CHECK_THROWS_AS(xml_parse("<a v='&bogus;'/>"), ParseError);
  CHECK_THROWS_AS(xml_parse("<a"), ParseError);
}

TEST_CASE("missing attribute diagnostics carry the element line") {
  auto root = xml_parse("<a>\n\n  <b/>\n</a>");
  try {
    root.children[0].require_attr("name");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line == 3);
  }
}

TEST_CASE("children_named filters by element name") {
  auto root = xml_parse("<a><m i='0'/><n/><m i='1'/></a>");
  auto ms = root.children_named("m");
  REQUIRE(ms.size() == 2);
  CHECK(ms[1]->require_attr("i") == "1");
}
