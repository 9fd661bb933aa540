import os
import sys

# Under ctest, test the module from the build tree even when an editable install
# (whose import hook takes precedence over PYTHONPATH) is present.
_build = os.environ.get("EQUICONTACT_EXPECT_MODULE_DIR")
if _build:
    sys.meta_path[:] = [f for f in sys.meta_path if not type(f).__module__.startswith("_editable")]
    sys.path.insert(0, os.path.dirname(_build))
