#pragma once

// Shared fixtures: the two-CPU, four-subject reference configuration whose
// schedule drives the hand-derived clock expectations used across the suite.

#include <string>

#include "skrefine/policy.hpp"

namespace testsupport {

inline std::string demo_policy_xml() {
  return R"(<?xml version="1.0"?>
<system tick_rate="10000" ncpus="2">
  <subject name="sub1" cpu="0" ip="0x400000" sp="0x500ff8">
    <memory logical="binary" virtual_address="0x400000" size="0x1000" rwe="r-x" content="fill:0x01"/>
    <memory logical="data" virtual_address="0x500000" size="0x1000" rwe="rw-" content="fill:0x00"/>
    <channel_ref name="chan0" virtual_address="0x70000000" writable="true"/>
  </subject>
  <subject name="sub2" cpu="0" ip="0x400000" sp="0x500ff8">
    <memory logical="binary" virtual_address="0x400000" size="0x1000" rwe="r-x" content="fill:0x01"/>
    <memory logical="data" virtual_address="0x500000" size="0x1000" rwe="rw-" content="fill:0x00"/>
    <channel_ref name="chan0" virtual_address="0x70000000" writable="false"/>
  </subject>
  <subject name="sub3" cpu="1" ip="0x400000" sp="0x500ff8">
    <memory logical="binary" virtual_address="0x400000" size="0x1000" rwe="r-x" content="fill:0x01"/>
    <memory logical="data" virtual_address="0x500000" size="0x1000" rwe="rw-" content="fill:0x00"/>
  </subject>
  <subject name="sub4" cpu="1" ip="0x400000" sp="0x500ff8">
    <memory logical="binary" virtual_address="0x400000" size="0x1000" rwe="r-x" content="fill:0x01"/>
    <memory logical="data" virtual_address="0x500000" size="0x1000" rwe="rw-" content="fill:0x00"/>
  </subject>
  <channels>
    <channel name="chan0" size="0x1000"/>
  </channels>
  <scheduling>
    <major_frame>
      <cpu id="0">
        <minor_fr sub_id="1" ticks="40"/>
        <minor_fr sub_id="2" ticks="40"/>
      </cpu>
      <cpu id="1">
        <minor_fr sub_id="3" ticks="80"/>
      </cpu>
    </major_frame>
    <major_frame>
      <cpu id="0">
        <minor_fr sub_id="1" ticks="80"/>
        <minor_fr sub_id="2" ticks="40"/>
      </cpu>
      <cpu id="1">
        <minor_fr sub_id="4" ticks="60"/>
        <minor_fr sub_id="3" ticks="60"/>
      </cpu>
    </major_frame>
  </scheduling>
  <routing>
    <irq vector="33" subject="sub2" dest_vector="5"/>
  </routing>
</system>
)";
}

inline skrefine::Policy demo_policy() { return skrefine::parse_policy(demo_policy_xml()); }

}  // namespace testsupport
