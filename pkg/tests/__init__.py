#------------------------------------------------------------------------
# This file is included so that pytest can find the package
# root and import the `invert` module from a local relative path.
#
# https://docs.pytest.org/en/latest/goodpractices.html#test-package-name
#------------------------------------------------------------------------
