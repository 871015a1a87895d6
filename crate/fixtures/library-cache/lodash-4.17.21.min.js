/* lodash stand-in for the test corpus */
window._ = {
  each: function (list, f) { for (var i = 0; i < list.length; i++) { f(list[i], i); } return list; },
  map: function (list, f) { var out = []; for (var i = 0; i < list.length; i++) { out.push(f(list[i], i)); } return out; }
};
