"""
Test suite for Spectral Ordering

Unit tests for meshes, fields, assembly, eigensolvers and verdicts, plus
end-to-end runs of the experiment pipeline and the CLI.
"""
