function Slider(sel) { this.sel = sel; }
