// qtraj.hpp: everything.

#pragma once

#include "qtraj/hilbert.hpp"
#include "qtraj/lindblad.hpp"
#include "qtraj/rng.hpp"
#include "qtraj/unravel.hpp"
#include "qtraj/photodetect.hpp"
#include "qtraj/histories.hpp"
#include "qtraj/io.hpp"
