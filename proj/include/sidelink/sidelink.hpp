// Umbrella header.
#pragma once

#include "sidelink/core.hpp"
#include "sidelink/scene.hpp"
#include "sidelink/waveform.hpp"
#include "sidelink/chest.hpp"
#include "sidelink/crlb.hpp"
#include "sidelink/tracker.hpp"
#include "sidelink/config.hpp"
#include "sidelink/campaign.hpp"
#include "sidelink/metrics.hpp"
#include "sidelink/report.hpp"
