var Widget = { render: function (sel) { return sel; } };
