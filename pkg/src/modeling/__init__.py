"""
Modeling layer: filter inflation with its verification engine, and the
training objectives.
"""
