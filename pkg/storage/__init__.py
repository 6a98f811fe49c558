# storage: image / .flo codecs and on-disk directory layouts
