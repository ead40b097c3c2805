#!/usr/bin/env python3
''' Allow running cmseq as module: `python -m cmseq` '''

from cmseq import main

if __name__ == "__main__":
    main()
