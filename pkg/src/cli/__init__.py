"""
Command-line interface for crowd label fusion.
"""
