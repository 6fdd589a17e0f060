# Services package for the mode sorter: optics, modes, sorter, genetic optimizer and file I/O
