"""Scalp channel roster of the preprocessed ZuCo recordings (105 names).

Cz is the recording reference and carries all zeros; the converter drops
it, leaving 104 output channels.
"""

ZUCO_CHANNELS = [
    "E2", "E3", "E4", "E5", "E6", "E7", "E9", "E10", "E11", "E12", "E13",
    "E15", "E16", "E18", "E19", "E20", "E22", "E23", "E24", "E26", "E27",
    "E28", "E29", "E30", "E31", "E33", "E34", "E35", "E36", "E37", "E38",
    "E39", "E40", "E41", "E42", "E43", "E44", "E45", "E46", "E47", "E50",
    "E51", "E52", "E53", "E54", "E55", "E57", "E58", "E59", "E60", "E61",
    "E62", "E64", "E65", "E66", "E67", "E69", "E70", "E71", "E72", "E74",
    "E75", "E76", "E77", "E78", "E79", "E80", "E82", "E83", "E84", "E85",
    "E86", "E87", "E89", "E90", "E91", "E92", "E93", "E95", "E96", "E97",
    "E98", "E100", "E101", "E102", "E103", "E104", "E105", "E106", "E108",
    "E109", "E110", "E111", "E112", "E114", "E115", "E116", "E117", "E118",
    "E120", "E121", "E122", "E123", "E124", "Cz",
]

REFERENCE_CHANNEL = "Cz"

assert len(ZUCO_CHANNELS) == 105
