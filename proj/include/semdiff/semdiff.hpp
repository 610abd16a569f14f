#pragma once

// Umbrella header for the semdiff library: semantic-communication split
// diffusion content delivery at desk scale.

#include "semdiff/channel.hpp"
#include "semdiff/config.hpp"
#include "semdiff/csv.hpp"
#include "semdiff/diffusion.hpp"
#include "semdiff/experiment.hpp"
#include "semdiff/latent.hpp"
#include "semdiff/losses.hpp"
#include "semdiff/metrics.hpp"
#include "semdiff/rng.hpp"
#include "semdiff/schedules.hpp"
#include "semdiff/scheduler.hpp"
#include "semdiff/source.hpp"
#include "semdiff/transceiver.hpp"
