#pragma once

// Umbrella header: pulls in the whole library.

#include "meshodom/evalkit.hpp"
#include "meshodom/features.hpp"
#include "meshodom/fusion.hpp"
#include "meshodom/geometry.hpp"
#include "meshodom/hashstore.hpp"
#include "meshodom/io.hpp"
#include "meshodom/meshing.hpp"
#include "meshodom/odometry.hpp"
#include "meshodom/parallel.hpp"
#include "meshodom/pipeline.hpp"
#include "meshodom/synth.hpp"
