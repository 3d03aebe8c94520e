#pragma once

#include "rtcleak/bencode.hpp"
#include "rtcleak/btswarm.hpp"
#include "rtcleak/ipv4.hpp"
#include "rtcleak/netsim.hpp"
#include "rtcleak/overlay.hpp"
#include "rtcleak/pipeline.hpp"
#include "rtcleak/rng.hpp"
#include "rtcleak/rtcdir.hpp"
#include "rtcleak/scenario.hpp"
#include "rtcleak/sniffer.hpp"
#include "rtcleak/tracker.hpp"
#include "rtcleak/verifier.hpp"
#include "rtcleak/world.hpp"
